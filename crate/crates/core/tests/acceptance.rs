//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing the test harness capture) before asserting.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumorpatch::cca::{filter_small, label_components, mask_centroid, CentroidMode};
use tumorpatch::evaluation::{
    compare_strategies, write_reports, Comparison, CorpusParams, EvalOptions, PhantomCorpus, BRATS_SHAPE,
};
use tumorpatch::homology::{persistence_0d, Filtration, PersistenceDiagram0};
use tumorpatch::metrics::{
    confusion, dice, dice_loss, focal_loss, sensitivity, specificity, DICE_EPS,
};
use tumorpatch::patching::{cca_window, write_patch_set, PatchParams, Strategy, PATCH_SIZE};
use tumorpatch::preprocess::threshold::{yen_threshold, yen_thresholds};
use tumorpatch::preprocess::{extract_roi, zscore_normalize};
use tumorpatch::{BinaryMask, Connectivity, Grid, VolumeFormat};

use common::{flood_fill, sort_pairs, sublevel_sweep, yen_brute_force};

const CORPUS_SIZE: usize = 50;
const CORPUS_SEED: u64 = 2020;
const RATIO_MIN: f64 = 4.0;
/// Volume of the full scan over the volume of one 128^3 patch.
const RATIO_MAX: f64 = 8_928_000.0 / 2_097_152.0;
const CENTRE_TOL: f64 = 1.0;
const DISTANCE_MARGIN: f64 = 20.0;
const CENTROID_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const FOCAL_REFERENCE: f64 = 0.0433217;
const FOCAL_TOL: f64 = 1e-6;
const ROI_DICE_MIN: f64 = 0.9;
const ROI_PASS_SHARE: f64 = 0.9;
const SINGLE_CASE_BUDGET: Duration = Duration::from_secs(10);

fn report(id: u32, ok: bool, what: &str, elapsed: Duration) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "[{verdict}] {id:>2} {what} ({:.2}s)", elapsed.as_secs_f64()).unwrap();
}

fn corpus() -> PhantomCorpus {
    PhantomCorpus::new(CorpusParams::default(), CORPUS_SEED, CORPUS_SIZE)
}

struct Shared {
    comparison: Comparison,
    elapsed: Duration,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let strategies = [Strategy::Cca, Strategy::RandomSeeded, Strategy::CenteredCrop, Strategy::Overlapping];
        let comparison =
            compare_strategies(&corpus(), &strategies, &PatchParams::default(), EvalOptions::default()).unwrap();
        for r in &comparison.reports {
            assert!(r.failures.is_empty(), "{}: {:?}", r.strategy, r.failures);
            assert_eq!(r.cases.len(), CORPUS_SIZE);
        }
        Shared { comparison, elapsed: t.elapsed() }
    })
}

fn metric(row: &[Option<f64>; 14], name: &str) -> f64 {
    let k = tumorpatch::evaluation::METRICS.iter().position(|m| *m == name).unwrap();
    row[k].unwrap_or_else(|| panic!("{name} undefined"))
}

#[test]
fn c01_cca_patch_raises_tumor_fraction_about_fourfold() {
    let s = shared();
    let cca = s.comparison.report(Strategy::Cca).unwrap();
    let ratios: Vec<f64> = cca
        .cases
        .iter()
        .map(|c| metric(&c.best, "tumor_fraction") / c.full_counts.tumor_fraction())
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(l, h), &r| (l.min(r), h.max(r)));
    let ok = ratios.len() >= 20 && lo >= RATIO_MIN && hi <= RATIO_MAX && s.elapsed <= Duration::from_secs(300);
    report(1, ok, &format!("tumor fraction ratio over {} phantoms in [{lo:.4}, {hi:.4}]", ratios.len()), s.elapsed);
    assert!(ok, "{ratios:?}");
}

#[test]
fn c02_twenty_voxel_filter_boundary() {
    let t = Instant::now();
    // Three straight runs, one per row, separated by empty rows.
    let lengths = [19usize, 20, 21];
    let mask: BinaryMask = Grid::from_fn([24, 5, 1], |p| p[1] % 2 == 0 && p[1] / 2 < 3 && p[0] < lengths[p[1] / 2]).unwrap();
    let cs = label_components(&mask, Connectivity::Eight).unwrap();
    let mut sizes: Vec<usize> = cs.components.iter().map(|c| c.voxel_count).collect();
    sizes.sort();
    let kept = filter_small(&cs, 20);
    let mut kept_sizes: Vec<usize> = kept.components.iter().map(|c| c.voxel_count).collect();
    kept_sizes.sort();
    let ok = sizes == [19, 20, 21] && kept_sizes == [20, 21] && kept.voxel_total() == 41;
    report(2, ok, &format!("sizes {sizes:?} -> kept {kept_sizes:?}"), t.elapsed());
    assert!(ok);
}

fn finite_pairs(d: &PersistenceDiagram0) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = d.pairs.iter().map(|p| (p.birth, p.death)).collect();
    sort_pairs(&mut v);
    v
}

#[test]
fn c03_persistence_matches_threshold_sweep() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for i in 0..200 {
        // Few levels so ties and plateaus are common.
        let levels = rng.random_range(2..12);
        let img = Grid::from_fn([8, 8, 1], |_| rng.random_range(0..levels) as f64).unwrap();
        let (conn, axes) = if i % 2 == 0 { (Connectivity::Four, 1) } else { (Connectivity::Eight, 2) };
        let sub = persistence_0d(&img, Filtration::Sublevel, conn).unwrap();
        let ours = finite_pairs(&sub);
        let oracle = sublevel_sweep(&img, axes);

        let neg = img.map(|v| -v);
        let sup = persistence_0d(&neg, Filtration::Superlevel, conn).unwrap();
        let mut dual: Vec<(f64, f64)> = sup.pairs.iter().map(|p| (-p.birth, -p.death)).collect();
        sort_pairs(&mut dual);

        let c = rng.random_range(-40..40) as f64;
        let shifted = persistence_0d(&img.map(|v| v + c), Filtration::Sublevel, conn).unwrap();
        let mut moved: Vec<(f64, f64)> = ours.iter().map(|&(b, d)| (b + c, d + c)).collect();
        sort_pairs(&mut moved);

        if ours != oracle || dual != ours || finite_pairs(&shifted) != moved {
            bad += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = bad == 0 && elapsed <= Duration::from_secs(60);
    report(3, ok, &format!("persistence oracle, duality, shift: {bad}/200 mismatches"), elapsed);
    assert!(ok);
}

#[test]
fn c04_components_match_flood_fill() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let conns = [(Connectivity::Six, 1), (Connectivity::Eighteen, 2), (Connectivity::TwentySix, 3)];
    let mut bad = 0;
    let mut worst = 0.0f64;
    for i in 0..200 {
        let density = rng.random_range(0.2..0.7);
        let mask: BinaryMask = Grid::from_fn([6, 6, 6], |_| rng.random_bool(density)).unwrap();
        let (conn, axes) = conns[i % 3];
        let cs = label_components(&mask, conn).unwrap();
        let oracle = flood_fill(&mask, axes);

        let mut fwd = HashMap::new();
        let mut back = HashMap::new();
        let mut consistent = true;
        for (j, (&ours, &theirs)) in cs.labels.data().iter().zip(&oracle).enumerate() {
            if (ours == 0) != (theirs == 0) || !mask.data()[j] == (ours != 0) {
                consistent = false;
            }
            if ours != 0 {
                consistent &= *fwd.entry(ours).or_insert(theirs) == theirs;
                consistent &= *back.entry(theirs).or_insert(ours) == ours;
            }
        }
        consistent &= fwd.len() == cs.len();
        for comp in &cs.components {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for (j, &l) in cs.labels.data().iter().enumerate() {
                if l == comp.id {
                    let p = cs.labels.coords(j);
                    (0..3).for_each(|a| sum[a] += p[a] as f64);
                    n += 1;
                }
            }
            consistent &= n == comp.voxel_count;
            for a in 0..3 {
                worst = worst.max((comp.centroid[a] - sum[a] / n as f64).abs());
            }
        }
        if !cs.is_empty() {
            let union = mask_centroid(&cs, CentroidMode::Union).unwrap();
            let coords: Vec<_> = (0..mask.len()).filter(|&j| mask.data()[j]).map(|j| mask.coords(j)).collect();
            for a in 0..3 {
                let direct = coords.iter().map(|p| p[a] as f64).sum::<f64>() / coords.len() as f64;
                worst = worst.max((union[a] - direct).abs());
            }
        }
        if !consistent {
            bad += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = bad == 0 && worst <= CENTROID_TOL && elapsed <= Duration::from_secs(60);
    report(4, ok, &format!("labelling oracle: {bad}/200 mismatches, centroid error {worst:.1e}"), elapsed);
    assert!(ok);
}

#[test]
fn c05_metrics_match_counting() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut loss_sum_exact = true;
    for _ in 0..500 {
        let shape = [rng.random_range(1..10), rng.random_range(1..10), rng.random_range(1..5)];
        let (dp, dt) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let p: BinaryMask = Grid::from_fn(shape, |_| rng.random_bool(dp)).unwrap();
        let tr: BinaryMask = Grid::from_fn(shape, |_| rng.random_bool(dt)).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (&a, &b) in p.data().iter().zip(tr.data()) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let d = dice(&p, &tr, DICE_EPS).unwrap();
        let expect = (2.0 * tp as f64 + DICE_EPS) / ((tp + fp) as f64 + (tp + fn_) as f64 + DICE_EPS);
        worst = worst.max((d - expect).abs());
        let c = confusion(&p, &tr).unwrap();
        if tp + fn_ > 0 {
            worst = worst.max((sensitivity(&c).unwrap() - tp as f64 / (tp + fn_) as f64).abs());
        } else {
            assert!(sensitivity(&c).is_err());
        }
        if tn + fp > 0 {
            worst = worst.max((specificity(&c).unwrap() - tn as f64 / (tn + fp) as f64).abs());
        } else {
            assert!(specificity(&c).is_err());
        }

        let probs = Grid::from_fn(shape, |_| rng.random_range(0.0..=1.0)).unwrap();
        let d = dice(&probs, &tr, DICE_EPS).unwrap();
        loss_sum_exact &= dice_loss(&probs, &tr, DICE_EPS).unwrap() + d == 1.0;

        let q: f64 = rng.random_range(1e-6..1.0);
        worst = worst.max((focal_loss(q, 1.0, 0.0).unwrap() - (-q.ln())).abs());
    }
    let focal = focal_loss(0.5, 0.25, 2.0).unwrap();
    let elapsed = t.elapsed();
    let ok = worst <= METRIC_TOL
        && loss_sum_exact
        && (focal - FOCAL_REFERENCE).abs() <= FOCAL_TOL
        && elapsed <= Duration::from_secs(60);
    report(
        5,
        ok,
        &format!("metric oracle error {worst:.1e}, dice_loss + dice exact: {loss_sum_exact}, focal {focal:.7}"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c06_cca_patch_is_centred_on_the_tumor() {
    let s = shared();
    let cca = s.comparison.report(Strategy::Cca).unwrap();
    let random = s.comparison.report(Strategy::RandomSeeded).unwrap();
    let worst = cca.cases.iter().map(|c| metric(&c.best, "center_distance")).fold(0.0, f64::max);
    let mean_cca = cca.best.mean_of("center_distance").unwrap();
    let mean_random = random.best.mean_of("center_distance").unwrap();
    let ok = worst <= CENTRE_TOL && mean_random - mean_cca >= DISTANCE_MARGIN && s.elapsed <= Duration::from_secs(600);
    report(
        6,
        ok,
        &format!("cca max distance {worst:.3}, mean cca {mean_cca:.3} vs random {mean_random:.3}"),
        s.elapsed,
    );
    assert!(ok);
}

#[test]
fn c07_recall_ordering() {
    let s = shared();
    let recall = |st| s.comparison.report(st).unwrap().best.mean_of("recall_wt").unwrap();
    let (cca, over, random, centre) = (
        recall(Strategy::Cca),
        recall(Strategy::Overlapping),
        recall(Strategy::RandomSeeded),
        recall(Strategy::CenteredCrop),
    );
    let ok = cca >= over && over >= random && cca >= centre;
    report(
        7,
        ok,
        &format!("mean WT recall cca {cca:.4}, overlapping best {over:.4}, random {random:.4}, centre {centre:.4}"),
        s.elapsed,
    );
    assert!(ok);
}

#[test]
fn c08_yen_matches_exhaustive_search() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for i in 0..1000 {
        let mut counts: Vec<u64> = match i % 3 {
            0 => (0..256).map(|_| rng.random_range(0..1000)).collect(),
            // Sparse with repeated values, so ties occur.
            1 => (0..256).map(|_| if rng.random_bool(0.2) { rng.random_range(1..4) } else { 0 }).collect(),
            _ => {
                let m = rng.random_range(40.0..200.0);
                (0..256).map(|b| (5000.0 * (-((b as f64 - m) / 25.0).powi(2)).exp()) as u64).collect()
            }
        };
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            counts[0] = 1;
            counts[255] = 1;
        }
        let expect = yen_brute_force(&counts);
        if yen_threshold(&counts).unwrap() != expect || yen_thresholds(&counts, 1).unwrap() != [expect] {
            bad += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = bad == 0 && elapsed <= Duration::from_secs(60);
    report(8, ok, &format!("Yen threshold oracle: {bad}/1000 mismatches"), elapsed);
    assert!(ok);
}

#[test]
fn c09_roi_overlaps_the_phantom_tumor() {
    let t = Instant::now();
    let corpus = corpus();
    let params = PatchParams::default();
    let mut scores = Vec::new();
    for i in 0..CORPUS_SIZE {
        let phantom = corpus.phantom(i).unwrap();
        assert!(phantom.params.contrast >= 4.0);
        let roi = extract_roi(&zscore_normalize(&phantom.volume).unwrap(), &params.roi).unwrap();
        let truth = phantom.mask.whole_tumor();
        scores.push(dice(&roi, &truth, 0.0).unwrap());
    }
    let passing = scores.iter().filter(|&&d| d >= ROI_DICE_MIN).count();
    let share = passing as f64 / scores.len() as f64;
    let min = scores.iter().copied().fold(f64::MAX, f64::min);
    let elapsed = t.elapsed();
    let ok = share >= ROI_PASS_SHARE && elapsed <= Duration::from_secs(300);
    report(9, ok, &format!("ROI dice >= {ROI_DICE_MIN} on {passing}/{} (min {min:.3})", scores.len()), elapsed);
    assert!(ok);
}

#[test]
fn c10_full_size_case_is_fast_and_deterministic() {
    let corpus = corpus();
    let case = corpus.phantom(0).unwrap().into_case(corpus.case_id(0)).unwrap();
    assert_eq!(case.flair().unwrap().shape(), BRATS_SHAPE);
    let params = PatchParams::default();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let window = pool.install(|| cca_window(&case, &params)).unwrap();
    let single = t.elapsed();
    assert_eq!(window.spec.size, [PATCH_SIZE; 3]);

    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let a = write_patch_set(&case, Strategy::Cca, &params, &dir.path().join("a"), VolumeFormat::Nifti).unwrap();
    let b = write_patch_set(&case, Strategy::Cca, &params, &dir.path().join("b"), VolumeFormat::Nifti).unwrap();
    let case_dir = |root: &str| dir.path().join(root).join(case.case_id());
    let mut names: Vec<_> = std::fs::read_dir(case_dir("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    identical &= std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() && names.len() == 3;
    for name in &names {
        identical &= std::fs::read(case_dir("a").join(name)).unwrap() == std::fs::read(case_dir("b").join(name)).unwrap();
    }

    let few = PhantomCorpus::new(CorpusParams::default(), CORPUS_SEED, 2);
    let opts = EvalOptions { timing: false, jobs: Some(1) };
    let strategies = [Strategy::Cca, Strategy::RandomSeeded];
    let ra = write_reports(&dir.path().join("ra"), &compare_strategies(&few, &strategies, &params, opts).unwrap()).unwrap();
    let rb = write_reports(&dir.path().join("rb"), &compare_strategies(&few, &strategies, &params, opts).unwrap()).unwrap();
    identical &= ra.len() == rb.len();
    for (x, y) in ra.iter().zip(&rb) {
        identical &= std::fs::read(x).unwrap() == std::fs::read(y).unwrap();
    }

    let ok = single <= SINGLE_CASE_BUDGET && identical;
    report(
        10,
        ok,
        &format!("single-threaded cca window {:.2}s, patch files and reports identical: {identical}", single.as_secs_f64()),
        single,
    );
    assert!(ok);
}
