use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{ReadoutKind, RunConfig};
use super::files::{load_dataset, load_latents, save_dataset, save_latents, Checkpoint};
use super::script::parse_script;
use crate::cflow::{conditional_sample, train_with, AttributeScaler, ConditionalFlow};
use crate::editpipe::{broadcast, cfe, jre, EditMode, EditRequest, EditSession, EditTable, Readout, Variant};
use crate::error::{Error, Result};
use crate::evalkit::{
    diffvec_stats, edit_consistency, identity_accuracy, identity_scores, identity_threshold, leakage, path_deviation,
    EditSequence, MetricReport,
};
use crate::numerics::{DenseMatrix, RngStream};
use crate::synthworld::{gen_dataset, make_world_with_channels, WorldSpec};

/// Evaluation suites accepted by [`cmd_eval`].
pub const SUITES: &[&str] = &["identity", "consistency", "diffvec", "path", "leakage", "all"];

/// Consistency probes: name, probed channel, first and second sequence.
const CONSISTENCY_PROBES: &[(&str, &str, &[&str], &[&str])] = &[
    ("pose_ep_pl", "yaw", &["expression", "yaw"], &["yaw", "light"]),
    ("light_le_pl", "light_0", &["light", "expression"], &["yaw", "light"]),
    ("facial_hair_fl_pf", "facial_hair", &["facial_hair", "light"], &["yaw", "facial_hair"]),
];

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

pub fn cmd_init(out: &Path, force: bool, stdout: &mut dyn Write) -> Result<()> {
    if out.exists() && !force {
        return Err(Error::config(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let text = RunConfig::default().to_toml()?;
    std::fs::write(out, text)?;
    writeln!(stdout, "wrote {}", out.display()).map_err(io_err)
}

pub fn cmd_gen_data(cfg: &RunConfig, out: Option<&Path>, stdout: &mut dyn Write) -> Result<PathBuf> {
    let world = cfg.world.build()?;
    let ds = gen_dataset(&world, cfg.data.size, cfg.data.seed, cfg.data.truncation)?;
    let path = cfg.resolve(out.unwrap_or(&cfg.data.path));
    save_dataset(&path, &ds)?;
    writeln!(stdout, "triples: {}", ds.len()).map_err(io_err)?;
    writeln!(stdout, "fingerprint: {:016x}", ds.world_fingerprint).map_err(io_err)?;
    writeln!(stdout, "dataset: {}", path.display()).map_err(io_err)?;
    Ok(path)
}

pub fn cmd_train(cfg: &RunConfig, data: Option<&Path>, out: Option<&Path>, stdout: &mut dyn Write) -> Result<PathBuf> {
    let world = cfg.world.build()?;
    let data_path = cfg.resolve(data.unwrap_or(&cfg.data.path));
    let ds = load_dataset(&data_path)?;
    if ds.world_fingerprint != world.fingerprint() {
        return Err(Error::config(format!(
            "dataset fingerprint {:016x} does not match the configured world {:016x}",
            ds.world_fingerprint,
            world.fingerprint()
        )));
    }
    let (d, l) = (world.latent_dim(), world.attr_dim());
    let mut flow = ConditionalFlow::init(d, l, cfg.model.blocks, cfg.model.init_seed)?;
    flow.scaler = AttributeScaler::fit(ds.triples.iter().map(|t| t.a.as_slice()))?;
    flow.solver = cfg.train.solver.clone();
    writeln!(stdout, "parameters: {}", flow.model.param_count()).map_err(io_err)?;
    let mut lines = Vec::new();
    let report = train_with(&mut flow, &ds.triples, &cfg.train, &mut |e, nll| lines.push(format!("epoch {e}: nll {nll:.6}")));
    for line in &lines {
        writeln!(stdout, "{line}").map_err(io_err)?;
    }
    let report = report?;
    let ckpt = Checkpoint {
        world_fingerprint: world.fingerprint(),
        world_seed: world.seed,
        channels: world.channels.clone(),
        flow,
        train_config: cfg.train.clone(),
        loss_curve: report.epoch_nll,
    };
    let path = cfg.resolve(out.unwrap_or(&cfg.output.checkpoint));
    ckpt.save(&path)?;
    writeln!(stdout, "checkpoint: {}", path.display()).map_err(io_err)?;
    Ok(path)
}

/// Rebuilds the world a checkpoint was trained on and checks its fingerprint.
pub fn checkpoint_world(ckpt: &Checkpoint) -> Result<WorldSpec> {
    let world = make_world_with_channels(ckpt.world_seed, ckpt.flow.latent_dim(), &ckpt.channels)?;
    if world.fingerprint() != ckpt.world_fingerprint {
        return Err(Error::Integrity("checkpoint world fingerprint does not match its rebuilt world".into()));
    }
    Ok(world)
}

/// Attribute targets: the training means, overridden by `name=value` pairs.
pub fn parse_targets(ckpt: &Checkpoint, world: &WorldSpec, sets: &[String]) -> Result<Vec<f64>> {
    let mut a = ckpt.flow.scaler.mean.clone();
    for s in sets {
        let (name, value) = s.split_once('=').ok_or_else(|| Error::config(format!("expected NAME=VALUE, got {s:?}")))?;
        let k = world.channel_index(name.trim())?;
        a[k] = value
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::config(format!("invalid value for {name}: {value:?}")))?;
    }
    Ok(a)
}

pub struct SampleArgs<'a> {
    pub checkpoint: &'a Path,
    pub sets: &'a [String],
    pub n: usize,
    pub seed: u64,
    pub truncation: Option<f64>,
    pub out: Option<&'a Path>,
}

pub fn cmd_sample(args: &SampleArgs<'_>, stdout: &mut dyn Write) -> Result<Vec<Vec<f64>>> {
    if args.n == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let world = checkpoint_world(&ckpt)?;
    let target = parse_targets(&ckpt, &world, args.sets)?;
    let samples = conditional_sample(&ckpt.flow, &target, args.n, &mut RngStream::new(args.seed), args.truncation)?;
    if let Some(out) = args.out {
        let items = samples.iter().map(|w| broadcast(w, 1)).collect::<Result<Vec<_>>>()?;
        save_latents(out, &items)?;
        writeln!(stdout, "latents: {}", out.display()).map_err(io_err)?;
    }
    let attrs = samples.iter().map(|w| world.attribute_fn(w)).collect::<Result<Vec<_>>>()?;
    let n = args.n as f64;
    writeln!(stdout, "channel target mean std_err").map_err(io_err)?;
    for (k, name) in world.channels.iter().enumerate() {
        let mean = attrs.iter().map(|a| a[k]).sum::<f64>() / n;
        let se = if args.n > 1 {
            (attrs.iter().map(|a| (a[k] - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        writeln!(stdout, "{name} {:.6} {mean:.6} {se:.6}", target[k]).map_err(io_err)?;
    }
    Ok(samples)
}

fn readout(kind: ReadoutKind, table: &EditTable, channels: &[String], rows: usize) -> Readout {
    match kind {
        ReadoutKind::Mean => Readout::MeanRows,
        ReadoutKind::PerChannel => Readout::per_channel(table, channels, rows),
    }
}

pub struct EditArgs<'a> {
    pub checkpoint: &'a Path,
    pub input: &'a Path,
    pub script: &'a Path,
    pub out: &'a Path,
    pub variant: Option<Variant>,
    pub mode: Option<EditMode>,
}

pub fn cmd_edit(cfg: &RunConfig, args: &EditArgs<'_>, stdout: &mut dyn Write) -> Result<Vec<DenseMatrix>> {
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let world = checkpoint_world(&ckpt)?;
    let table = cfg.edit.load_table(&cfg.out_dir())?;
    let steps = parse_script(&std::fs::read_to_string(args.script)?)?;
    for s in &steps {
        let kind = table.get(&s.edit).map_err(|e| Error::Parse { line: s.line, msg: e.to_string() })?;
        kind.resolve_channels(&world.channels).map_err(|e| Error::Parse { line: s.line, msg: e.to_string() })?;
    }
    let variant = args.variant.unwrap_or(cfg.edit.variant);
    let k = cfg.edit.rows;
    let items = load_latents(args.input)?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let start = match item.rows() {
            1 => broadcast(item.row(0), k)?,
            r if r == k => item.clone(),
            r => return Err(Error::shape(format!("latent item {i} has {r} rows; expected 1 or {k}"))),
        };
        let ro = readout(cfg.edit.readout, &table, &world.channels, k);
        let mut session = EditSession::measured(&ckpt.flow, start, &world, ro)?;
        for (j, s) in steps.iter().enumerate() {
            let kind = table.get(&s.edit)?;
            let chans = kind.resolve_channels(&world.channels)?;
            let current: Vec<f64> = chans.iter().map(|c| session.attributes()[*c]).collect();
            let mode = s.mode.unwrap_or(args.mode.unwrap_or(cfg.edit.mode));
            let req = EditRequest::new(kind, &world.channels, &s.resolve(&current), mode, variant)
                .map_err(|e| Error::Parse { line: s.line, msg: e.to_string() })?;
            let step = session.apply(&req)?;
            let rows: Vec<String> = step.changed_rows.iter().map(|r| r.to_string()).collect();
            let mut line = format!("item {i} step {j} {} mode={mode} variant={variant} rows=[{}]", s.edit, rows.join(","));
            for (c, name) in world.channels.iter().enumerate() {
                match req.targets.iter().find(|(t, _)| *t == c) {
                    Some((_, v)) => line.push_str(&format!(" *{name}={:.6}(target {v:.6})", step.a_new[c])),
                    None => line.push_str(&format!(" {name}={:.6}", step.a_new[c])),
                }
            }
            writeln!(stdout, "{line}").map_err(io_err)?;
        }
        out.push(session.into_state());
    }
    save_latents(args.out, &out)?;
    writeln!(stdout, "latents: {}", args.out.display()).map_err(io_err)?;
    Ok(out)
}

/// Starting codes for evaluation: `mapping_f` of seeded Gaussian draws.
pub fn eval_starts(world: &WorldSpec, n: usize, seed: u64, truncation: f64) -> Result<Vec<Vec<f64>>> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|_| world.mapping_f(&rng.gaussian(world.latent_dim())?, truncation)).collect()
}

/// Edit target one training-set standard deviation above the mean on every
/// channel the edit sets.
fn eval_request(flow: &ConditionalFlow, kind: &crate::editpipe::EditKind, channels: &[String], mode: EditMode, variant: Variant) -> Result<EditRequest> {
    let chans = kind.resolve_channels(channels)?;
    let values: Vec<f64> = chans.iter().map(|&c| flow.scaler.mean[c] + flow.scaler.std[c]).collect();
    EditRequest::new(kind, channels, &values, mode, variant)
}

pub fn eval_report(cfg: &RunConfig, ckpt: &Checkpoint, suite: &str) -> Result<MetricReport> {
    if !SUITES.contains(&suite) {
        return Err(Error::config(format!("unknown suite {suite:?} (expected one of {})", SUITES.join(", "))));
    }
    let run = |s: &str| suite == "all" || suite == s;
    let world = checkpoint_world(ckpt)?;
    let flow = &ckpt.flow;
    let table = cfg.edit.load_table(&cfg.out_dir())?;
    let starts = eval_starts(&world, cfg.eval.starts, cfg.eval.seed, cfg.data.truncation)?;
    let usable: Vec<EditRequest> = table
        .kinds
        .iter()
        .filter(|k| k.resolve_channels(&world.channels).is_ok())
        .map(|k| eval_request(flow, k, &world.channels, cfg.edit.mode, cfg.edit.variant))
        .collect::<Result<_>>()?;
    let all_channels: Vec<usize> = (0..world.attr_dim()).collect();
    let mut report = MetricReport::new();

    if run("identity") {
        let mut null_d = Vec::new();
        for w in &starts {
            let a = world.attribute_fn(w)?;
            let back = cfe(flow, &jre(flow, w, &a)?, &a)?;
            null_d.push(identity_scores(&world.identity_embed(w)?, &world.identity_embed(&back)?)?.1);
        }
        let threshold = identity_threshold(&null_d, cfg.eval.identity_quantile)?;
        report.insert("identity.threshold", threshold)?;
        let (mut cs_all, mut ed_all) = (Vec::new(), Vec::new());
        for req in &usable {
            let (mut cs, mut ed) = (Vec::new(), Vec::new());
            for w in &starts {
                let a = world.attribute_fn(w)?;
                let w_new = cfe(flow, &jre(flow, w, &a)?, &req.target_attributes(&a)?)?;
                let (c, e) = identity_scores(&world.identity_embed(w)?, &world.identity_embed(&w_new)?)?;
                cs.push(c);
                ed.push(e);
            }
            let n = cs.len() as f64;
            report.insert(&format!("identity.{}.cosine", req.kind.name), cs.iter().sum::<f64>() / n)?;
            report.insert(&format!("identity.{}.euclid", req.kind.name), ed.iter().sum::<f64>() / n)?;
            report.insert(&format!("identity.{}.accuracy", req.kind.name), identity_accuracy(&ed, threshold)?)?;
            cs_all.extend(cs);
            ed_all.extend(ed);
        }
        if !cs_all.is_empty() {
            let n = cs_all.len() as f64;
            report.insert("identity.cosine", cs_all.iter().sum::<f64>() / n)?;
            report.insert("identity.euclid", ed_all.iter().sum::<f64>() / n)?;
            report.insert("identity.accuracy", identity_accuracy(&ed_all, threshold)?)?;
        }
    }

    if run("consistency") {
        let ro = readout(cfg.edit.readout, &table, &world.channels, cfg.edit.rows);
        for (name, probe, first, second) in CONSISTENCY_PROBES {
            let Ok(channel) = world.channel_index(probe) else { continue };
            let build = |names: &[&str]| -> Option<Result<EditSequence>> {
                let reqs: Option<Vec<&EditRequest>> = names.iter().map(|n| usable.iter().find(|r| r.kind.name == *n)).collect();
                reqs.map(|r| EditSequence::new(r.into_iter().cloned().collect()))
            };
            let (Some(sa), Some(sb)) = (build(first), build(second)) else { continue };
            let (sa, sb) = (sa?, sb?);
            let mut total = 0.0;
            for w in &starts {
                total += edit_consistency(flow, &world, &ro, &broadcast(w, cfg.edit.rows)?, &sa, &sb, channel)?;
            }
            report.insert(&format!("consistency.{name}"), total / starts.len() as f64)?;
        }
    }

    for req in &usable {
        let name = &req.kind.name;
        if run("diffvec") {
            let s = diffvec_stats(flow, &world, req, &starts)?;
            report.insert(&format!("diffvec.{name}.mean_norm"), s.mean_norm)?;
            report.insert(&format!("diffvec.{name}.max_angle_deg"), s.max_angle_deg)?;
        }
        if run("path") {
            let mut total = 0.0;
            for w in &starts {
                let a = world.attribute_fn(w)?;
                let z0 = jre(flow, w, &a)?;
                total += path_deviation(flow, &z0, &a, &req.target_attributes(&a)?, cfg.eval.path_samples)?;
            }
            report.insert(&format!("path.{name}.deviation"), total / starts.len() as f64)?;
        }
        if run("leakage") {
            let value = leakage(flow, &world, req, &all_channels, &starts, &flow.scaler.std)?;
            report.insert(&format!("leakage.{name}"), value)?;
        }
    }
    Ok(report)
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub suite: &'a str,
    pub out: Option<&'a Path>,
    pub json: Option<&'a Path>,
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs<'_>, stdout: &mut dyn Write) -> Result<MetricReport> {
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let report = eval_report(cfg, &ckpt, args.suite)?;
    let text = report.to_text();
    stdout.write_all(text.as_bytes()).map_err(io_err)?;
    if let Some(p) = args.out {
        std::fs::write(p, &text)?;
    }
    if let Some(p) = args.json {
        std::fs::write(p, report.to_json()?)?;
    }
    Ok(report)
}

pub fn cmd_inspect(checkpoint: &Path, stdout: &mut dyn Write) -> Result<()> {
    let c = Checkpoint::load(checkpoint)?;
    let m = &c.flow.model;
    let mut s = String::new();
    s.push_str(&format!("latent_dim: {}\n", m.latent_dim()));
    s.push_str(&format!("attr_dim: {}\n", m.attr_dim()));
    s.push_str(&format!("blocks: {}\n", m.blocks.len()));
    s.push_str(&format!("parameters: {}\n", m.param_count()));
    s.push_str(&format!("end_time: {}\n", m.end_time()));
    s.push_str(&format!("world: seed {} fingerprint {:016x}\n", c.world_seed, c.world_fingerprint));
    s.push_str(&format!("channels: {}\n", c.channels.join(" ")));
    let t = &c.train_config;
    s.push_str(&format!("train: epochs {} batch_size {} lr {} seed {}\n", t.epochs, t.batch_size, t.lr, t.seed));
    s.push_str(&format!("solver: rtol {} atol {} probes {}\n", t.solver.rtol, t.solver.atol, t.solver.probe_count));
    match c.loss_curve.last() {
        Some(l) => s.push_str(&format!("final_nll: {l}\n")),
        None => s.push_str("final_nll: none\n"),
    }
    let curve: Vec<String> = c.loss_curve.iter().map(|x| format!("{x:.6}")).collect();
    s.push_str(&format!("loss_curve: [{}]\n", curve.join(", ")));
    stdout.write_all(s.as_bytes()).map_err(io_err)
}
