//! Subcommand configs and their execution.

use coexist_core::analysis::block::BlockDynamics;
use coexist_core::analysis::formulas::{evaluate_all, FormulaInputs};
use coexist_core::analysis::{
    block_event_prob, coexistence_run, estimate_lambda_c, gap_experiment, richardson_duality,
    shape_measure, source_propagation, BlockCriterionConfig, CoexistenceConfig, Estimate,
    GapExperimentConfig, LambdaCConfig, Runner, ShapeConfig, SourceGridConfig,
};
use coexist_core::engine::{Halt, ObserverPlan, StopRule};
use coexist_core::error::{config as config_error, Error};
use coexist_core::lattice::{SiteState, SnapshotHeader};
use coexist_core::processes::{make_process, ProcessSpec, TwoTypeParams};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;
use toml::Table;

use crate::config::{set_number, typed};
use crate::output::{PlotRow, Report};

/// Run-wide settings taken from the command line.
pub struct Ctx {
    pub seed: u64,
    pub replicates: u64,
    /// Set when `--replicates` was given explicitly.
    pub replicates_flag: bool,
    pub runner: Runner,
    pub snapshot_every: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observe {
    pub t_max: f64,
    pub sample_dt: f64,
    #[serde(default)]
    pub halt: Halt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub process: ProcessSpec,
    pub observe: Observe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaCSection {
    pub lambda_c: LambdaCConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSection {
    pub block: BlockCriterionConfig,
    pub dynamics: BlockDynamics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Duality {
    pub a: Vec<(i32, i32)>,
    pub b: Vec<(i32, i32)>,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeSection {
    pub shape: ShapeConfig,
    #[serde(default)]
    pub duality: Option<Duality>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSection {
    pub gap: GapExperimentConfig,
    pub params: TwoTypeParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSection {
    pub source: SourceGridConfig,
    pub params: TwoTypeParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoexistSection {
    pub coexist: CoexistenceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormulasSection {
    pub formulas: FormulaInputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Subcommand run at each grid point.
    pub target: String,
    /// Dotted path of a numeric key in the target's config.
    pub parameter: String,
    pub values: Vec<f64>,
}

/// A config checked against its subcommand, ready to run.
pub enum Prepared {
    Simulate(SimulateConfig),
    LambdaC(LambdaCSection),
    Block(BlockSection),
    Shape(ShapeSection),
    Gap(GapSection),
    Source(SourceSection),
    Coexist(CoexistSection),
    Formulas(FormulasSection),
    Sweep(SweepSpec, Vec<(f64, Prepared)>),
}

pub fn prepare(command: &str, table: &Table) -> Result<Prepared, Error> {
    Ok(match command {
        "simulate" => {
            let c: SimulateConfig = typed(table)?;
            make_process(&c.process)?;
            let o = &c.observe;
            if !(o.t_max >= 0.0 && o.sample_dt > 0.0) {
                return Err(config_error("observe needs t_max >= 0 and sample_dt > 0"));
            }
            Prepared::Simulate(c)
        }
        "lambda-c" => Prepared::LambdaC(typed(table)?),
        "block-prob" => {
            let c: BlockSection = typed(table)?;
            c.block.validate()?;
            Prepared::Block(c)
        }
        "shape" => Prepared::Shape(typed(table)?),
        "gap" => {
            let c: GapSection = typed(table)?;
            c.gap.validate()?;
            Prepared::Gap(c)
        }
        "source" => {
            let c: SourceSection = typed(table)?;
            c.source.constants(c.params.fire_width)?;
            Prepared::Source(c)
        }
        "coexist" => Prepared::Coexist(typed(table)?),
        "formulas" => {
            let c: FormulasSection = typed(table)?;
            evaluate_all(&c.formulas)?;
            Prepared::Formulas(c)
        }
        "sweep" => {
            let mut rest = table.clone();
            let spec_value = rest
                .remove("sweep")
                .ok_or_else(|| config_error("sweep needs a [sweep] section"))?;
            let mut wrapper = Table::new();
            wrapper.insert("sweep".into(), spec_value);
            #[derive(Serialize, Deserialize)]
            struct Wrap {
                sweep: SweepSpec,
            }
            let spec = typed::<Wrap>(&wrapper)?.sweep;
            if matches!(spec.target.as_str(), "sweep") {
                return Err(config_error("a sweep cannot target sweep"));
            }
            let mut points = Vec::new();
            for &v in &spec.values {
                let mut t = rest.clone();
                set_number(&mut t, &spec.parameter, v)?;
                let p = prepare(&spec.target, &t)
                    .map_err(|e| config_error(format!("at {} = {v}: {e}", spec.parameter)))?;
                points.push((v, p));
            }
            if points.is_empty() {
                // the target itself still has to be a valid config
                prepare(&spec.target, &rest)?;
            }
            Prepared::Sweep(spec, points)
        }
        other => return Err(config_error(format!("unknown subcommand {other}"))),
    })
}

pub fn needs_seed(p: &Prepared) -> bool {
    match p {
        Prepared::Formulas(_) => false,
        Prepared::Sweep(_, points) => points.iter().any(|(_, p)| needs_seed(p)),
        _ => true,
    }
}

fn to_json<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("results serialize")
}

pub fn execute(p: &Prepared, ctx: &Ctx) -> Result<Report, Error> {
    match p {
        Prepared::Simulate(c) => simulate(c, ctx),
        Prepared::LambdaC(c) => {
            let mut cfg = c.lambda_c;
            if ctx.replicates_flag {
                cfg.replicates = ctx.replicates;
            }
            let out = estimate_lambda_c(&cfg, ctx.seed, &ctx.runner)?;
            let mut plot = vec![PlotRow::estimate("lambda_c", &out.estimate)];
            for pr in &out.probes {
                let mut row = PlotRow::point("ratio", None, pr.ratio);
                row.parameter = "lambda".into();
                row.parameter_value = Some(pr.lambda);
                plot.push(row);
            }
            Ok(Report {
                result: to_json(&out),
                plot,
                ..Default::default()
            })
        }
        Prepared::Block(c) => {
            let out =
                block_event_prob(&c.block, &c.dynamics, ctx.replicates, ctx.seed, &ctx.runner)?;
            Ok(Report {
                plot: vec![
                    PlotRow::estimate("block_full", &out.full),
                    PlotRow::estimate("block_side", &out.side),
                    PlotRow::point("fire_factor", None, out.fire_factor),
                ],
                raw: Some(out.raw_csv()),
                result: to_json(&out),
                ..Default::default()
            })
        }
        Prepared::Shape(c) => shape(c, ctx),
        Prepared::Gap(c) => {
            let out = gap_experiment(&c.gap, &c.params, ctx.replicates, ctx.seed, &ctx.runner)?;
            Ok(Report {
                plot: vec![
                    PlotRow::estimate("persist", &out.persist),
                    PlotRow::estimate("no_invasion", &out.no_invasion),
                ],
                raw: Some(out.raw_csv()),
                result: to_json(&out),
                ..Default::default()
            })
        }
        Prepared::Source(c) => {
            let out =
                source_propagation(&c.source, &c.params, ctx.replicates, ctx.seed, &ctx.runner)?;
            Ok(Report {
                plot: vec![PlotRow::estimate("source_propagation", &out.estimate)],
                raw: Some(out.raw_csv()),
                result: to_json(&out),
                ..Default::default()
            })
        }
        Prepared::Coexist(c) => {
            let out = coexistence_run(&c.coexist, ctx.replicates, ctx.seed, &ctx.runner)?;
            let mut plot = vec![
                PlotRow::estimate("survive1", &out.survive1),
                PlotRow::estimate("survive2", &out.survive2),
                PlotRow::estimate("both", &out.both),
                PlotRow::estimate("control_survive1", &out.control_survive1),
            ];
            for (name, pts) in [("fire", &out.series), ("control", &out.control)] {
                for p in pts.iter() {
                    plot.push(PlotRow::point(&format!("{name}_rho1"), Some(p.t), p.rho1));
                    plot.push(PlotRow::point(&format!("{name}_rho2"), Some(p.t), p.rho2));
                }
            }
            Ok(Report {
                series: Some(out.series_csv()),
                raw: Some(out.raw_csv()),
                plot,
                result: to_json(&out),
                ..Default::default()
            })
        }
        Prepared::Formulas(c) => {
            let v = evaluate_all(&c.formulas)?;
            Ok(Report {
                plot: vec![
                    PlotRow::point("block_unaffected", None, v.block_unaffected),
                    PlotRow::point("fire_gap", None, v.fire_gap),
                    PlotRow::point("spread_success", None, v.spread_success),
                ],
                result: to_json(&v),
                ..Default::default()
            })
        }
        Prepared::Sweep(spec, points) => {
            if points.is_empty() {
                warn!(
                    "sweep over {} has no values; writing a header-only plot table",
                    spec.parameter
                );
            }
            let mut results = Vec::new();
            let mut plot = Vec::new();
            for (v, p) in points {
                let r = execute(p, ctx)?;
                for mut row in r.plot {
                    row.parameter = spec.parameter.clone();
                    row.parameter_value = Some(*v);
                    plot.push(row);
                }
                results.push(json!({ "value": v, "result": r.result }));
            }
            Ok(Report {
                result: json!({ "target": spec.target, "parameter": spec.parameter, "points": results }),
                plot,
                ..Default::default()
            })
        }
    }
}

fn simulate(c: &SimulateConfig, ctx: &Ctx) -> Result<Report, Error> {
    let process = make_process(&c.process)?;
    let stop = StopRule {
        t_max: c.observe.t_max,
        halt: c.observe.halt,
    };
    stop.validate()?;
    let mut plan = ObserverPlan::every(c.observe.sample_dt, c.observe.t_max);
    plan.snapshot_every = ctx.snapshot_every;
    let trajectories = ctx.runner.try_map(ctx.seed, ctx.replicates, |_, seed| {
        let mut sim = process.simulation(seed)?;
        Ok(sim.run_until(stop, &plan))
    })?;

    let sites = (process.width() as f64).powi(2);
    let mut series = String::from("replicate,t,n1,n2\n");
    let mut snapshots = Vec::new();
    let mut per_rep = Vec::new();
    for (i, tr) in trajectories.iter().enumerate() {
        for s in &tr.samples {
            series.push_str(&format!("{i},{},{},{}\n", s.t, s.n1, s.n2));
        }
        for snap in &tr.snapshots {
            let header = SnapshotHeader {
                width: process.width(),
                height: process.width(),
                boundary: process.boundary(),
                time: snap.time,
                seed: tr.seed,
            };
            let head = serde_json::to_string(&header).expect("header serializes");
            snapshots.push((
                format!("r{i:04}_t{:012.4}.txt", snap.time),
                format!("{head}\n{}", snap.text),
            ));
        }
        per_rep.push(json!({
            "seed": tr.seed,
            "extinction": tr.extinction,
            "final_time": tr.final_time,
            "counts": tr.counts,
            "final": tr.samples.last(),
        }));
    }
    let survive = |k: usize| {
        let s = trajectories
            .iter()
            .filter(|t| t.extinction[k].is_none())
            .count() as u64;
        Estimate::proportion(s, ctx.replicates, "survival", ctx.seed)
    };
    let (s1, s2) = (survive(0)?, survive(1)?);
    let mut plot = vec![
        PlotRow::estimate("survive1", &s1),
        PlotRow::estimate("survive2", &s2),
    ];
    let n_samples = trajectories
        .iter()
        .map(|t| t.samples.len())
        .min()
        .unwrap_or(0);
    for k in 0..n_samples {
        let t = trajectories[0].samples[k].t;
        for (name, sp) in [("rho1", SiteState::One), ("rho2", SiteState::Two)] {
            let vals: Vec<f64> = trajectories
                .iter()
                .map(|tr| {
                    let s = tr.samples[k];
                    (if sp == SiteState::One { s.n1 } else { s.n2 }) as f64 / sites
                })
                .collect();
            let e = Estimate::mean(&vals, name, ctx.seed)?;
            let mut row = PlotRow::estimate(name, &e);
            row.t = Some(t);
            plot.push(row);
        }
    }
    Ok(Report {
        result: json!({ "survive1": s1, "survive2": s2, "replicates": per_rep }),
        series: Some(series),
        raw: None,
        snapshots,
        plot,
    })
}

fn shape(c: &ShapeSection, ctx: &Ctx) -> Result<Report, Error> {
    let data = shape_measure(&c.shape, ctx.seed)?;
    let mut series =
        String::from("t,area,inner_radius,outer_radius,convexity,valid,coupled_in_hit\n");
    for s in &data.samples {
        series.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t,
            s.area,
            s.inner_radius,
            s.outer_radius,
            s.convexity,
            s.valid as u8,
            s.coupled_in_hit.map_or(String::new(), |x| x.to_string())
        ));
    }
    let mut plot = vec![
        PlotRow::point("inner_speed", None, data.inner_speed),
        PlotRow::point("outer_speed", None, data.outer_speed),
        PlotRow::point("inner_box_speed", None, data.inner_box_speed),
        PlotRow::point("outer_box_speed", None, data.outer_box_speed),
        PlotRow::point("radius_fit_r2", None, data.radius_fit.2),
    ];
    for s in &data.samples {
        plot.push(PlotRow::point("area", Some(s.t), s.area as f64));
    }
    let flags = data.shape_flags(c.shape.eps);
    let mut result = json!({ "shape": data, "shape_flags": flags });
    if let Some(d) = &c.duality {
        let (ab, ba) = richardson_duality(
            c.shape.beta,
            c.shape.kernel,
            c.shape.size,
            &d.a,
            &d.b,
            d.t,
            ctx.replicates,
            ctx.seed,
            &ctx.runner,
        )?;
        plot.push(PlotRow::estimate("duality_a_to_b", &ab));
        plot.push(PlotRow::estimate("duality_b_to_a", &ba));
        result["duality"] = json!({ "a_to_b": ab, "b_to_a": ba });
    }
    Ok(Report {
        result,
        series: Some(series),
        plot,
        ..Default::default()
    })
}
