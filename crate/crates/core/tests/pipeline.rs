use tumorpatch::evaluation::{generate_phantom, PhantomParams};
use tumorpatch::metrics::tumor_centroid;
use tumorpatch::patching::{cca_window, tda2d_window, write_patch_set, PatchParams, Strategy};
use tumorpatch::{Case, Grid, VolumeFormat};

fn phantom(seed: u64, center: [f64; 3], contrast: f64) -> Case {
    let params = PhantomParams {
        shape: [96, 96, 72],
        center,
        semi_axes: [14.0, 10.0, 9.0],
        contrast,
        ..PhantomParams::default()
    };
    generate_phantom(seed, &params).unwrap().into_case(format!("p{seed}")).unwrap()
}

fn params() -> PatchParams {
    PatchParams { size: 64, ..PatchParams::default() }
}

#[test]
fn cca_window_centres_on_the_tumor() {
    for (seed, center) in [(1, [48.0, 48.0, 36.0]), (2, [40.0, 55.0, 30.0]), (3, [56.0, 44.0, 40.0])] {
        let case = phantom(seed, center, 5.0);
        let w = cca_window(&case, &params()).unwrap();
        let truth = tumor_centroid(case.mask().unwrap()).unwrap();
        let anchor = w.provenance.anchor.unwrap();
        let off = (0..3).map(|a| (anchor[a] - truth[a]).powi(2)).sum::<f64>().sqrt();
        assert!(off < 1.0, "seed {seed}: anchor {anchor:?} vs {truth:?}");
        assert!(w.provenance.roi_dice.unwrap() > 0.9);
        assert!(w.provenance.warnings.is_empty());
    }
}

#[test]
fn clamped_window_near_a_face_stays_inside() {
    let case = phantom(4, [15.0, 80.0, 10.0], 5.0);
    let w = cca_window(&case, &params()).unwrap();
    assert_eq!(w.spec.origin, [0, 32, 0]);
}

#[test]
fn flat_volume_falls_back_to_the_centre() {
    let flat = Grid::filled([96, 96, 72], 3.0).unwrap();
    let case = Case::from_flair("flat", flat, None).unwrap();
    for w in [cca_window(&case, &params()).unwrap(), tda2d_window(&case, &params()).unwrap()] {
        assert_eq!(w.spec.origin, [16, 16, 4]);
        assert!(!w.provenance.warnings.is_empty());
    }
}

#[test]
fn zero_contrast_roi_misses_the_tumor() {
    // Pure noise still has a Yen cut, so no fallback; the ROI is noise.
    let case = phantom(5, [30.0, 30.0, 30.0], 0.0);
    let w = cca_window(&case, &params()).unwrap();
    assert!(w.provenance.roi_dice.unwrap() < 0.1);
}

#[test]
fn planar_window_lands_on_the_tumor_slice() {
    let case = phantom(6, [50.0, 42.0, 33.0], 5.0);
    let w = tda2d_window(&case, &params()).unwrap();
    let k = w.provenance.slice.unwrap();
    assert!((24..=42).contains(&k), "slice {k}");
    let anchor = w.provenance.anchor.unwrap();
    assert!((anchor[0] - 50.0).abs() < 3.0 && (anchor[1] - 42.0).abs() < 3.0, "{anchor:?}");
    assert_eq!(w.spec.size, [64, 64, 64]);
}

#[test]
fn patch_sets_are_bit_identical_across_runs() {
    let case = phantom(7, [48.0, 40.0, 36.0], 4.0);
    let dir = tempfile::tempdir().unwrap();
    for strategy in [Strategy::Cca, Strategy::RandomSeeded, Strategy::FixedQuadrant] {
        let a = write_patch_set(&case, strategy, &params(), &dir.path().join("a"), VolumeFormat::Nifti).unwrap();
        let b = write_patch_set(&case, strategy, &params(), &dir.path().join("b"), VolumeFormat::Nifti).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a/p7"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 3 + 2 + 2 + 8);
    for name in &names {
        let a = std::fs::read(dir.path().join("a/p7").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b/p7").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
