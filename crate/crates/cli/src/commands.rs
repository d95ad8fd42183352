use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use deltacomp::checkpoint::inexact_elements;
use deltacomp::fixtures::{toy_transformer, PROBE_K, PROBE_Q};
use deltacomp::format::{ddq, dtc};
use deltacomp::pipeline::{self, forward_layer};
use deltacomp::{
    build_report, layer_loss, merge, proxy_error, split, AttentionProbe, CompressOptions,
    DeltaCheckpoint, DenseMatrix, GroupChoice, Method,
};
use serde_json::json;

use crate::{BaselineMethod, Command, CompressArgs};

/// Bad flag values or combinations, reported with exit status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<deltacomp::Error>() {
        Some(deltacomp::Error::Parameter(_) | deltacomp::Error::EmptyCandidates(_)) => 1,
        _ => 2,
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Split {
            base,
            finetuned,
            out,
        } => cmd_split(&base, &finetuned, &out),
        Command::Merge { base, delta, out } => cmd_merge(&base, &delta, &out),
        Command::Compress(args) => cmd_compress(&args),
        Command::Decompress { artifact, out } => cmd_decompress(&artifact, &out),
        Command::Forward {
            base,
            artifact,
            inputs,
            layer,
            fused,
            out,
        } => cmd_forward(&base, &artifact, &inputs, &layer, fused, out.as_deref()),
        Command::Eval {
            base,
            finetuned,
            artifact,
            inputs,
            probe_q,
            probe_k,
            json,
        } => cmd_eval(
            &base, &finetuned, &artifact, &inputs, probe_q, probe_k, json,
        ),
        Command::Stats {
            artifact,
            json,
            csv,
        } => cmd_stats(&artifact, json, csv),
        Command::Baseline {
            delta,
            out,
            method,
            alpha,
            seed,
            include,
        } => cmd_baseline(&delta, &out, method, alpha, seed, &include),
        Command::GenFixtures { out_dir, seed } => cmd_gen_fixtures(&out_dir, seed),
    }
}

fn read_model(path: &Path) -> Result<deltacomp::ModelCheckpoint> {
    dtc::read(path).with_context(|| format!("reading `{}`", path.display()))
}

fn read_delta(path: &Path) -> Result<DeltaCheckpoint> {
    Ok(DeltaCheckpoint::from_checkpoint(read_model(path)?))
}

fn read_artifact(path: &Path) -> Result<deltacomp::DqArtifact> {
    ddq::read(path).with_context(|| format!("reading `{}`", path.display()))
}

fn read_inputs(path: &Path) -> Result<DenseMatrix> {
    dtc::read_inputs(path).with_context(|| format!("reading `{}`", path.display()))
}

fn cmd_split(base: &Path, finetuned: &Path, out: &Path) -> Result<()> {
    let b = read_model(base)?;
    let f = read_model(finetuned)?;
    let delta = split(&b, &f)?;
    let inexact = inexact_elements(&b, &f, &delta);
    if inexact > 0 {
        eprintln!(
            "warning: {inexact} elements rounded in subtraction; merge will not be bit-exact"
        );
    }
    dtc::write(out, &delta.to_checkpoint())?;
    for (name, w) in &delta.tensors {
        println!("{name}\t{}", w.frobenius_sq().sqrt());
    }
    Ok(())
}

fn cmd_merge(base: &Path, delta: &Path, out: &Path) -> Result<()> {
    let merged = merge(&read_model(base)?, &read_delta(delta)?)?;
    dtc::write(out, &merged)?;
    Ok(())
}

fn parse_group(s: &str) -> Result<GroupChoice> {
    match s {
        "auto" => Ok(GroupChoice::Auto),
        "row" => Ok(GroupChoice::FullRow),
        n => match n.parse::<usize>() {
            Ok(g) if g > 0 => Ok(GroupChoice::Columns(g)),
            _ => usage(format!(
                "--group-size must be a positive integer, `row` or `auto`, got `{n}`"
            )),
        },
    }
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let group = parse_group(&a.group_size)?;
    let opts = CompressOptions {
        alpha: a.alpha,
        group,
        k: a.k,
        m: a.m,
        seed: a.seed,
        baseline_bits: a.baseline_bits,
        calib_fraction: a.calib_fraction,
        include: a.include.clone(),
    };
    let calib = a.calib.as_deref().map(read_inputs).transpose()?;
    let probe = match (&a.probe_q, &a.probe_k, &calib) {
        (Some(q), Some(k), Some(x)) => Some(AttentionProbe {
            wq_name: q.clone(),
            wk_name: k.clone(),
            calib: x.clone(),
        }),
        _ if group == GroupChoice::Auto => {
            return usage("--group-size auto needs --base, --probe-q, --probe-k and --calib")
        }
        _ => None,
    };
    let base = match (&a.base, group) {
        (Some(p), _) => Some(read_model(p)?),
        (None, GroupChoice::Auto) => {
            return usage("--group-size auto needs --base, --probe-q, --probe-k and --calib")
        }
        _ => None,
    };
    let delta = read_delta(&a.delta)?;
    let (artifact, search) = pipeline::compress(&delta, base.as_ref(), probe.as_ref(), &opts)?;
    if let Some(s) = &search {
        for (h, e) in &s.candidates {
            println!("group_size={h}\tproxy_error={e}");
        }
        println!("selected group_size={}", s.best);
    }
    ddq::write(&a.out, &artifact)?;
    let report = build_report(&artifact, Some(&delta), calib.as_ref())?;
    print!("{}", report.summary());
    if let Some(p) = &a.report {
        deltacomp::format::write_atomic(p, report.to_json()?.as_bytes())?;
    }
    if let Some(p) = &a.report_csv {
        deltacomp::format::write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_decompress(artifact: &Path, out: &Path) -> Result<()> {
    let delta = read_artifact(artifact)?.reconstruct()?;
    dtc::write(out, &delta.to_checkpoint())?;
    Ok(())
}

fn cmd_forward(
    base: &Path,
    artifact: &Path,
    inputs: &Path,
    layer: &str,
    fused: bool,
    out: Option<&Path>,
) -> Result<()> {
    let y = forward_layer(
        &read_model(base)?,
        &read_artifact(artifact)?,
        &read_inputs(inputs)?,
        layer,
        fused,
    )?;
    match out {
        Some(p) => {
            let mut ckpt = deltacomp::ModelCheckpoint::new("outputs");
            ckpt.insert("Y", y);
            dtc::write(p, &ckpt)?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            for r in 0..y.rows() {
                let row: Vec<String> = y.row(r).iter().map(f32::to_string).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    base: &Path,
    finetuned: &Path,
    artifact: &Path,
    inputs: &Path,
    probe_q: Option<String>,
    probe_k: Option<String>,
    json: bool,
) -> Result<()> {
    let b = read_model(base)?;
    let delta = split(&b, &read_model(finetuned)?)?;
    let art = read_artifact(artifact)?;
    let x = read_inputs(inputs)?;
    let mut losses = BTreeMap::new();
    let mut compressed = BTreeMap::new();
    for (name, layer) in &art.layers {
        if !layer.is_compressed() {
            continue;
        }
        let w = delta.tensors.get(name).ok_or_else(|| {
            deltacomp::Error::structure(name.as_str(), "not present in the models")
        })?;
        let w_hat = layer.to_sparse()?;
        if w.cols() == x.cols() {
            losses.insert(
                name.clone(),
                layer_loss(&x, w, &w_hat, Some(&b.tensors[name]))?,
            );
        }
        compressed.insert(name.clone(), w_hat);
    }
    let probe_q = probe_q.or_else(|| art.config.probe_q.clone());
    let probe_k = probe_k.or_else(|| art.config.probe_k.clone());
    let proxy = match (probe_q, probe_k) {
        (Some(q), Some(k)) => {
            let probe = AttentionProbe {
                wq_name: q,
                wk_name: k,
                calib: x,
            };
            Some(proxy_error(&b, &delta, &compressed, &probe)?)
        }
        (None, None) => None,
        _ => return usage("--probe-q and --probe-k go together"),
    };
    if json {
        let layers: Vec<_> = losses
            .iter()
            .map(|(name, l)| json!({ "name": name, "layer_loss": l }))
            .collect();
        println!("{}", json!({ "layers": layers, "proxy_error": proxy }));
    } else {
        for (name, l) in &losses {
            println!("{name}\tlayer_loss={l}");
        }
        if let Some(e) = proxy {
            println!("proxy_error={e}");
        }
    }
    Ok(())
}

fn cmd_stats(artifact: &Path, json: bool, csv: bool) -> Result<()> {
    let report = build_report(&read_artifact(artifact)?, None, None)?;
    if json {
        println!("{}", report.to_json()?);
    } else if csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.summary());
    }
    Ok(())
}

fn cmd_baseline(
    delta: &Path,
    out: &Path,
    method: BaselineMethod,
    alpha: f64,
    seed: u64,
    include: &[String],
) -> Result<()> {
    let method = match method {
        BaselineMethod::Magnitude => Method::Magnitude,
        BaselineMethod::GlobalDropout => Method::GlobalDropout,
    };
    let artifact = pipeline::baseline(&read_delta(delta)?, method, alpha, seed, include)?;
    ddq::write(out, &artifact)?;
    print!("{}", build_report(&artifact, None, None)?.summary());
    Ok(())
}

fn cmd_gen_fixtures(dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating `{}`", dir.display()))?;
    let toy = toy_transformer(seed);
    dtc::write(&dir.join("base.dtc"), &toy.base)?;
    dtc::write(&dir.join("finetuned.dtc"), &toy.finetuned)?;
    dtc::write_inputs(&dir.join("calib.dtc"), &toy.calib)?;
    println!(
        "wrote base.dtc, finetuned.dtc, calib.dtc to {}",
        dir.display()
    );
    println!("probe layers: {PROBE_Q} {PROBE_K}");
    Ok(())
}
