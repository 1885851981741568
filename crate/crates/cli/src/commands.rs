//! Subcommand bodies. Each returns the process exit code: 0 on success, 1 if
//! any case failed, 2 if the configuration was rejected before any work.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tumorpatch::cca::{filter_small, label_components};
use tumorpatch::evaluation::{
    compare_strategies, write_phantom, write_reports, CaseDirs, CaseSource, EvalOptions, PhantomCorpus,
};
use tumorpatch::patching::{write_patch_set, Strategy};
use tumorpatch::preprocess::{extract_roi_stages, zscore_normalize};
use tumorpatch::{Case, Connectivity, Error, Result};

use crate::args::{check_jobs, EvaluateArgs, ExtractArgs, PhantomArgs, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURES: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

fn usage(e: Error) -> u8 {
    log::error!("{e}");
    EXIT_USAGE
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

fn debug_dump(case: &Case, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let id = case.case_id();
    let normalized = zscore_normalize(case.flair()?)?;
    let stages = match extract_roi_stages(&normalized, &cfg.params.roi) {
        Ok(s) => s,
        Err(e @ (Error::Degenerate(_) | Error::Empty(_))) => {
            log::warn!("{id}: no ROI stages to dump: {e}");
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    stages.dump(dir, id)?;
    if cfg.strategy == Strategy::Cca {
        let shape = normalized.shape();
        let conn = cfg.params.connectivity.unwrap_or_else(|| Connectivity::default_for(shape));
        let kept = filter_small(&label_components(stages.mask(), conn)?, cfg.params.min_voxels);
        let path = dir.join(format!("{id}_components.csv"));
        let file = std::fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        kept.write_csv(file)?;
    }
    Ok(())
}

fn extract_case(cases: &CaseDirs, i: usize, cfg: &RunConfig) -> Result<PathBuf> {
    let case = cases.load(i)?;
    let manifest = write_patch_set(&case, cfg.strategy, &cfg.params, &cfg.output, cfg.format)?;
    if cfg.debug_dump {
        debug_dump(&case, cfg, &cfg.output.join(case.case_id()).join("debug"))?;
    }
    Ok(manifest)
}

pub fn cmd_extract(args: &ExtractArgs) -> u8 {
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let cases = match CaseDirs::scan(&cfg.input) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    log::info!("extracting {} patches from {} case(s)", cfg.strategy, cases.len());
    let outcomes = in_pool(cfg.jobs, || {
        (0..cases.len())
            .into_par_iter()
            .map(|i| extract_case(&cases, i, &cfg))
            .collect::<Vec<_>>()
    });
    let outcomes = match outcomes {
        Ok(o) => o,
        Err(e) => return usage(e),
    };
    let mut failed = 0;
    for (i, r) in outcomes.into_iter().enumerate() {
        match r {
            Ok(path) => log::info!("{}: wrote {}", cases.case_id(i), path.display()),
            Err(e) => {
                failed += 1;
                log::error!("{}: {e}", cases.case_id(i));
            }
        }
    }
    if failed > 0 {
        log::error!("{failed} of {} case(s) failed", cases.len());
        EXIT_FAILURES
    } else {
        EXIT_OK
    }
}

fn phantom_corpus(params: tumorpatch::evaluation::CorpusParams, seed: u64, count: usize) -> Result<PhantomCorpus> {
    if count == 0 {
        return Err(Error::InvalidParameter("phantom count must be at least 1".into()));
    }
    let corpus = PhantomCorpus::new(params, seed, count);
    for i in 0..count {
        corpus.phantom_params(i)?;
    }
    Ok(corpus)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> u8 {
    let setup = || -> Result<(Box<dyn CaseSource>, tumorpatch::patching::PatchParams)> {
        check_jobs(args.jobs)?;
        let params = args.patch.params(args.patch_seed)?;
        for (k, s) in args.strategies.iter().enumerate() {
            if args.strategies[..k].contains(s) {
                return Err(Error::InvalidParameter(format!("strategy {s} listed twice")));
            }
        }
        let source: Box<dyn CaseSource> = if args.inputs.is_empty() {
            Box::new(phantom_corpus(args.corpus.params(), args.seed, args.phantoms)?)
        } else {
            let mut dirs = Vec::new();
            for input in &args.inputs {
                dirs.extend(CaseDirs::scan(input)?.0);
            }
            Box::new(CaseDirs(dirs))
        };
        Ok((source, params))
    };
    let (source, params) = match setup() {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let names: Vec<&str> = args.strategies.iter().map(|s| s.name()).collect();
    log::info!("evaluating {} on {} case(s)", names.join(","), source.len());
    let options = EvalOptions { timing: !args.no_timing, jobs: args.jobs };
    let comparison = match compare_strategies(source.as_ref(), &args.strategies, &params, options) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Err(e) = write_reports(&args.output, &comparison) {
        log::error!("writing reports: {e}");
        return EXIT_FAILURES;
    }
    let failures: usize = comparison.reports.iter().map(|r| r.failures.len()).sum();
    log::info!("reports written to {}", args.output.display());
    if failures > 0 {
        log::error!("{failures} case evaluation(s) failed");
        EXIT_FAILURES
    } else {
        EXIT_OK
    }
}

pub fn cmd_phantom(args: &PhantomArgs) -> u8 {
    let corpus = match phantom_corpus(args.corpus.params(), args.seed, args.count) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let mut failed = 0;
    for i in 0..corpus.count {
        let id = corpus.case_id(i);
        let written = corpus.phantom(i).and_then(|p| write_phantom(p, &id, &args.output, args.format.into()));
        match written {
            Ok(dir) => log::info!("{id}: wrote {}", dir.display()),
            Err(e) => {
                failed += 1;
                log::error!("{id}: {e}");
            }
        }
    }
    if failed > 0 {
        EXIT_FAILURES
    } else {
        EXIT_OK
    }
}
