//! Kernel ridge fits on a CSV dataset with a Gaussian kernel.

use log::info;
use nalgebra::DVector;

use nystrom_krr::kernels::{median_bandwidth, LazyKernel};
use nystrom_krr::lowrank::{FeatureMap, PivotStop};
use nystrom_krr::regression::{predict, PredictContext};
use nystrom_krr::rng::derive_seed;
use nystrom_krr::{
    gram, krr_exact, newton_solve, nystrom, pivoted_ichol, sample_columns, KernelSpec, LowRankFactor,
    Loss, Points, RidgeFit,
};

use super::stamp;
use crate::config::{Config, FitMethod};
use crate::dataset::{load_dataset, Dataset, Schema};
use crate::error::Result;
use crate::output::{num, CsvTable};

/// Points used by the median-distance bandwidth heuristic.
pub const BANDWIDTH_SAMPLE: usize = 500;

/// Seed key for row capping.
const CAP_KEY: u64 = 0;
/// Seed key for the bandwidth subsample.
const BANDWIDTH_KEY: u64 = 1;
/// Seed key for column sampling.
const COLUMNS_KEY: u64 = 2;

/// Loads `[data]`, caps the row count and settles the Gaussian kernel.
pub fn load_configured(cfg: &Config) -> Result<(Dataset, KernelSpec)> {
    let d = &cfg.data;
    let schema = Schema {
        target: d.target.clone().unwrap_or_default(),
        features: d.features.clone(),
        standardize: true,
    };
    let path = d.path.as_deref().expect("validated");
    let data = load_dataset(path, &schema)?.cap_rows(d.max_rows, derive_seed(cfg.seed, &[CAP_KEY]));
    let bandwidth = match d.bandwidth {
        Some(b) => b,
        None => median_bandwidth(&data.features, BANDWIDTH_SAMPLE, derive_seed(cfg.seed, &[BANDWIDTH_KEY]))?,
    };
    info!("{}: {} rows, {} features, bandwidth {bandwidth}", data.name, data.len(), data.features.dim());
    let spec = KernelSpec::Gaussian { bandwidth };
    spec.validate()?;
    Ok((data, spec))
}

/// Logistic targets are the signs of the centered responses.
pub fn loss_targets(y: &DVector<f64>, loss: Loss) -> DVector<f64> {
    match loss {
        Loss::Square => y.clone(),
        Loss::Logistic => y.map(|v| if v > 0.0 { 1.0 } else { -1.0 }),
    }
}

/// Pivoted factor stopped at rank `p` or, without one, at
/// `tr(K - L) <= trace_tol * tr(K)`.
pub fn pivoted_factor(points: &Points, spec: KernelSpec, p: Option<usize>, trace_tol: f64) -> Result<LowRankFactor> {
    let oracle = LazyKernel::new(points, spec)?;
    let stop = match p {
        Some(p) => PivotStop::rank(p.min(points.len())),
        None => PivotStop::trace(trace_tol * spec.self_similarity() * points.len() as f64),
    };
    Ok(pivoted_ichol(&oracle, stop)?)
}

pub struct FitReport {
    pub table: CsvTable,
    pub fit: RidgeFit,
    pub rank: usize,
    pub train_mse: f64,
}

pub fn run_fit(cfg: &Config) -> Result<FitReport> {
    cfg.validate_fit()?;
    let c = &cfg.fit;
    let (data, spec) = load_configured(cfg)?;
    let y = loss_targets(&data.targets, c.loss);
    let n = data.len();
    let (fit, fitted, rank) = match c.method {
        FitMethod::Exact => {
            let k = gram(&data.features, &spec)?;
            let (fit, zhat) = krr_exact(&k, &y, c.lambda)?;
            (fit, zhat, n)
        }
        FitMethod::Random | FitMethod::Pivoted => {
            let factor = if c.method == FitMethod::Random {
                let p = c.p.expect("validated").min(n);
                let sel = sample_columns(n, p, derive_seed(cfg.seed, &[COLUMNS_KEY]))?;
                nystrom(&LazyKernel::new(&data.features, spec)?, &sel)?
            } else {
                pivoted_factor(&data.features, spec, c.p, c.trace_tol)?
            };
            let fit = newton_solve(&factor, &y, c.lambda, c.loss)?;
            let map = FeatureMap::new(&factor, &data.features, spec)?;
            let fitted = predict(&fit, &data.features, PredictContext::Features(&map))?;
            (fit, fitted, factor.rank())
        }
    };
    let train_mse = (&fitted - &y).norm_squared() / n as f64;

    let mut table = CsvTable::new(&["row", "target", "fitted"]);
    table.meta("dataset", &data.name);
    table.meta("n", n);
    table.meta("features", data.feature_names.join(" "));
    if !data.dropped.is_empty() {
        table.meta("dropped", data.dropped.join(" "));
    }
    if let KernelSpec::Gaussian { bandwidth } = spec {
        table.meta("bandwidth", num(bandwidth));
    }
    table.meta("method", format!("{:?}", c.method).to_lowercase());
    table.meta("loss", format!("{:?}", c.loss).to_lowercase());
    table.meta("lambda", num(c.lambda));
    table.meta("rank", rank);
    table.meta("train_mse", num(train_mse));
    for i in 0..n {
        table.push(vec![i.to_string(), num(y[i]), num(fitted[i])]);
    }
    stamp(&mut table, cfg, "fit");
    Ok(FitReport {
        table,
        fit,
        rank,
        train_mse,
    })
}
