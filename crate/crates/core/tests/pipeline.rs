use twinforge::kinematics::{self, FitConfig, GeometrySource};
use twinforge::model::urdf;
use twinforge::segmentation::{self, SegmentConfig};
use twinforge::synthgen::{self, Category, SceneRecipe};

fn reconstruct(category: Category) {
    let scene = synthgen::generate(&SceneRecipe::new(category)).unwrap();
    let clouds = scene.clouds();
    let labels = segmentation::segment_movable_parts(&clouds, None, &scene.contacts(), &SegmentConfig::default()).unwrap();

    let truth = scene.labels();
    let agree = labels.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    assert!(agree as f64 >= 0.99 * truth.len() as f64, "{}: {agree}/{} labels agree", category.name(), truth.len());

    let joints = kinematics::fit_all_joints(&clouds, &labels.labels, None, &FitConfig::default()).unwrap();
    assert_eq!(joints.len(), scene.model.num_movable());
    for est in &joints {
        let joint = scene.model.joint(est.part as usize).unwrap();
        assert_eq!(est.kind, joint.kind);
        assert!(est.axis.dot(&joint.axis).abs() > 0.999, "{}: axis {:?} vs {:?}", category.name(), est.axis, joint.axis);
    }

    let model = kinematics::build_model(category.name(), &labels.labels, clouds.last().unwrap(), &joints, GeometrySource::Hulls, &FitConfig::default())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    urdf::write_package(&model, dir.path(), "model.urdf").unwrap();
    let back = urdf::load_urdf(&dir.path().join("model.urdf")).unwrap();
    assert_eq!(back.num_movable(), model.num_movable());
    for (a, b) in back.parts.iter().zip(&model.parts) {
        assert_eq!(a.parent, b.parent);
        assert_eq!(a.geometry.len(), b.geometry.len());
        match (&a.joint, &b.joint) {
            (Some(ja), Some(jb)) => {
                assert_eq!(ja.kind, jb.kind);
                assert!((ja.axis - jb.axis).norm() < 1e-9);
                assert!((ja.lower - jb.lower).abs() < 1e-9 && (ja.upper - jb.upper).abs() < 1e-9);
            }
            (None, None) => {}
            _ => panic!("joint presence differs after the round trip"),
        }
    }
}

#[test]
fn drawer_reconstructs_and_round_trips() {
    reconstruct(Category::Drawer);
}

#[test]
fn laptop_reconstructs_and_round_trips() {
    reconstruct(Category::Laptop);
}
