use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use specdec::exact::{acceleration_rate, ExactRejections};
use specdec::montecarlo::{batch_scan, run_campaign, Campaign, Decoder};
use specdec::tradeoff::{pareto_front, saturating_epsilon};
use specdec::{tv_distance, Dist, MarkovModel, ModelPair, Policy};

use crate::config::{AlgorithmSpec, Config, ResidualSpec};
use crate::output::Table;

fn name(spec: &AlgorithmSpec) -> String {
    match spec {
        AlgorithmSpec::Autoregressive => "autoregressive".into(),
        AlgorithmSpec::Speculative => "speculative".into(),
        AlgorithmSpec::Batch(m) => format!("batch({m})"),
        AlgorithmSpec::OverAccept { epsilon, residual } => {
            let r = match residual {
                ResidualSpec::Optimal => "optimal",
                ResidualSpec::Target => "target",
            };
            format!("over_accept({epsilon},{r})")
        }
        AlgorithmSpec::Constant { acceptance } => format!("constant({acceptance})"),
    }
}

fn decoder<'a>(spec: &AlgorithmSpec, policy: &'a Option<Box<dyn Policy>>) -> Decoder<'a> {
    match (spec, policy) {
        (AlgorithmSpec::Autoregressive, _) => Decoder::Autoregressive,
        (AlgorithmSpec::Speculative, _) => Decoder::Speculative,
        (AlgorithmSpec::Batch(m), _) => Decoder::Batch(*m),
        (_, Some(p)) => Decoder::Generic(p.as_ref()),
        (_, None) => unreachable!("generic algorithms carry a policy"),
    }
}

fn exact_row(
    pair: &ModelPair<MarkovModel>,
    label: String,
    total: f64,
    improvement: Option<f64>,
) -> Result<Vec<Value>> {
    let t = pair.horizon();
    Ok(vec![
        json!(label),
        json!(total),
        json!(pair.expected_rejections_sd()),
        json!(improvement),
        json!(acceleration_rate(t, total)?),
    ])
}

pub fn exact(config: &Config) -> Result<Table> {
    let pair = config.pair()?;
    let sd = pair.expected_rejections_sd();
    let mut rows = vec![exact_row(&pair, "speculative".into(), sd, None)?];

    let batch = match (config.batch, config.algorithm) {
        (Some(m), _) | (None, AlgorithmSpec::Batch(m)) => Some(m),
        _ => None,
    };
    if let Some(m) = batch {
        if m == 0 {
            bail!("batch size must be at least 1");
        }
        let b = pair.expected_rejections_batch(m)?;
        rows.push(exact_row(&pair, format!("batch({m})"), b.total, Some(b.improvement))?);
    }

    match config.algorithm {
        AlgorithmSpec::Speculative | AlgorithmSpec::Batch(_) => {}
        spec => {
            let policy = spec.policy();
            let total = decoder(&spec, &policy)
                .exact_cost(&pair)?
                .context("no exact reference for this algorithm")?;
            rows.push(exact_row(&pair, name(&spec), total, None)?);
        }
    }

    Ok(Table {
        command: "exact",
        columns: &[
            "algorithm",
            "expected_rejections",
            "sd_rejections",
            "batch_improvement",
            "acceleration_rate",
        ],
        rows,
    })
}

pub fn simulate(config: &Config) -> Result<Table> {
    let pair = config.pair()?;
    let policy = config.algorithm.policy();
    let mut campaign = Campaign::new(
        &pair,
        decoder(&config.algorithm, &policy),
        config.runs.unwrap_or(10_000),
        config.seed,
    );
    campaign.checkpoint_every = config.checkpoint_every;
    let report = run_campaign(&campaign)?;
    let rows = report
        .checkpoints
        .iter()
        .map(|c| vec![json!(c.runs), json!(c.mean), json!(c.stderr), json!(c.exact), json!(c.rel_dev)])
        .collect();
    Ok(Table {
        command: "simulate",
        columns: &["checkpoint", "mean", "stderr", "exact", "rel_dev"],
        rows,
    })
}

pub fn batch_scan_cmd(config: &Config) -> Result<Table> {
    let pair = config.pair()?;
    let range = config.batch_range.clone().unwrap_or_else(|| (1..=8).collect());
    if range.is_empty() || range.contains(&0) {
        bail!("batch_range must be a nonempty list of positive batch sizes");
    }
    let rows = batch_scan(&pair, &range, config.runs.unwrap_or(1_000), config.seed)?
        .into_iter()
        .map(|r| {
            let m = r.batch.map_or_else(|| json!("inf"), |m| json!(m));
            vec![m, json!(r.exact), json!(r.mean), json!(r.stderr)]
        })
        .collect();
    Ok(Table {
        command: "batch-scan",
        columns: &["M", "exact", "mean", "stderr"],
        rows,
    })
}

pub fn pareto(config: &Config) -> Result<Table> {
    let spec = config.pareto.as_ref().context("config has no \"pareto\" section")?;
    let p = Dist::new(spec.p.clone()).context("invalid draft distribution p")?;
    let q = Dist::new(spec.q.clone()).context("invalid target distribution q")?;
    let tv = tv_distance(&p, &q)?;
    let grid = match (&spec.eps_grid, spec.eps_points) {
        (Some(g), None) => g.clone(),
        (None, Some(n)) if n >= 2 => {
            let top = saturating_epsilon(&p, &q);
            (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect()
        }
        (None, Some(_)) => bail!("eps_points must be at least 2"),
        _ => bail!("give exactly one of eps_grid and eps_points"),
    };
    if grid.is_empty() || grid.iter().any(|e| !e.is_finite()) {
        bail!("eps grid must be a nonempty list of finite values");
    }
    let rows = pareto_front(&p, &q, &grid)?
        .into_iter()
        .map(|pt| vec![json!(pt.epsilon), json!(pt.reject_prob), json!(pt.loss_star), json!(tv)])
        .collect();
    Ok(Table {
        command: "pareto",
        columns: &["eps", "reject_prob", "loss_star", "tv"],
        rows,
    })
}
