use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::settings::{parse_grid, Settings};
use super::{CliError, EXIT_FAILURE, EXIT_OK, SCHEMA_VERSION};
use crate::accounting::{analytic_cost, sweep, write_sweep_csv, CostReport};
use crate::adapters::checkpoint::{self, read_header};
use crate::adapters::{Adapter, AdapterKind, AdapterLayer, BasisIndexSet, CombinedModel};
use crate::autograd::{finite_diff_check, MseLoss, WorstEntry};
use crate::error::SboraError;
use crate::matrix::{Activation, Matrix, Precision, Scalar};
use crate::quant::{self, QuantizedMatrix, RoundtripStats};
use crate::training::{
    eval, make_task, population_mse, train as run_training, LrSchedule, OptimizerKind, SyntheticTask, TaskKind,
    TraceSummary, TrainConfig,
};

#[derive(Serialize)]
struct Report<'a, B> {
    schema_version: u32,
    command: &'static str,
    config: &'a BTreeMap<String, String>,
    #[serde(flatten)]
    body: B,
}

fn to_json<B: Serialize>(command: &'static str, s: &Settings, body: B) -> Result<String, CliError> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        config: s.resolved(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failure(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn emit<B: Serialize>(out: &mut dyn Write, command: &'static str, s: &Settings, body: B) -> Result<(), CliError> {
    out.write_all(to_json(command, s, body)?.as_bytes())?;
    Ok(())
}

fn check_rank(d: usize, k: usize, r: usize) -> Result<(), CliError> {
    if r == 0 || r > d.min(k) {
        return Err(SboraError::InvalidRank { rank: r, dim: d.min(k) }.into());
    }
    Ok(())
}

fn precision(s: &mut Settings) -> Result<Precision, CliError> {
    let bits: u32 = s.get("precision", "64")?;
    Precision::from_bits(bits).ok_or_else(|| CliError::Usage(format!("precision must be 32 or 64, got {bits}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn methods(s: &mut Settings) -> Result<Vec<AdapterKind>, CliError> {
    let raw: String = s.get("methods", "lora,sbora-fa,sbora-fb")?;
    if raw.trim() == "all" {
        return Ok(AdapterKind::ALL.to_vec());
    }
    raw.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| m.parse().map_err(CliError::from))
        .collect()
}

// ---------------------------------------------------------------- gradcheck

#[derive(Serialize)]
struct KindCheck {
    method: AdapterKind,
    instances: usize,
    entries_checked: usize,
    max_rel_err: f64,
    worst_instance: Option<usize>,
    worst: Option<WorstEntry>,
    pass: bool,
}

#[derive(Serialize)]
struct GradcheckBody {
    results: Vec<KindCheck>,
    pass: bool,
}

/// One random layer, input batch and regression target.
fn random_instance(
    kind: AdapterKind,
    d: usize,
    k: usize,
    r: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> crate::Result<(AdapterLayer<f64>, Activation<f64>, MseLoss)> {
    let w0 = Matrix::random_normal(d, k, 1.0 / (k as f64).sqrt(), rng)?;
    let adapter = match kind {
        AdapterKind::Lora => Adapter::new_lora(Matrix::random_normal(r, k, 1.0, rng)?, Matrix::random_normal(d, r, 1.0, rng)?)?,
        AdapterKind::SboraFa => {
            let basis = BasisIndexSet::sample(k, r, rng.random())?;
            Adapter::new_fa(basis, Matrix::random_normal(d, r, 1.0, rng)?)?
        }
        AdapterKind::SboraFb => {
            let basis = BasisIndexSet::sample(d, r, rng.random())?;
            Adapter::new_fb(basis, Matrix::random_normal(r, k, 1.0, rng)?)?
        }
    };
    let layer = AdapterLayer::new(w0, adapter, 1.0)?;
    let x = Activation::random_normal(batch, k, rng)?;
    let target = Activation::random_normal(batch, d, rng)?;
    Ok((layer, x, MseLoss { target }))
}

pub(super) fn gradcheck(mut s: Settings, out: &mut dyn Write) -> Result<i32, CliError> {
    let kinds = methods(&mut s)?;
    let n: usize = s.get("n", "100")?;
    let d = s.dim("d", "8")?;
    let k = s.dim("k", "8")?;
    let r: usize = s.get("r", "2")?;
    let batch = s.dim("batch", "4")?;
    let eps: f64 = s.get("eps", "1e-5")?;
    let tol: f64 = s.get("tol", "1e-4")?;
    let seed: u64 = s.get("seed", "0")?;
    check_rank(d, k, r)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(format!("eps must be positive, got {eps}")));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(CliError::Usage(format!("tol must be nonnegative, got {tol}")));
    }

    let mut results = Vec::new();
    for kind in kinds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(kind.code() as u64);
        let mut check = KindCheck {
            method: kind,
            instances: n,
            entries_checked: 0,
            max_rel_err: 0.0,
            worst_instance: None,
            worst: None,
            pass: true,
        };
        for i in 0..n {
            let (layer, x, loss) = random_instance(kind, d, k, r, batch, &mut rng)?;
            let report = finite_diff_check(&layer, &x, &loss, eps, tol)?;
            check.entries_checked += report.entries_checked;
            check.pass &= report.pass;
            if check.worst_instance.is_none() || report.max_rel_err > check.max_rel_err {
                check.max_rel_err = report.max_rel_err;
                check.worst_instance = Some(i);
                check.worst = report.worst;
            }
        }
        results.push(check);
    }
    let pass = results.iter().all(|c| c.pass);
    emit(out, "gradcheck", &s, GradcheckBody { results, pass })?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILURE })
}

// -------------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BasisMode {
    Matched,
    Mismatched,
    Random,
}

impl std::str::FromStr for BasisMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "matched" => Ok(BasisMode::Matched),
            "mismatched" => Ok(BasisMode::Mismatched),
            "random" => Ok(BasisMode::Random),
            other => Err(format!("expected matched, mismatched or random, got '{other}'")),
        }
    }
}

struct TrainSettings {
    method: AdapterKind,
    task: TaskKind,
    basis: BasisMode,
    d: usize,
    k: usize,
    r: usize,
    seed: u64,
    noise: f64,
    alpha: Option<f64>,
    quant_block: Option<usize>,
    eval_samples: usize,
    cfg: TrainConfig,
    out: PathBuf,
}

#[derive(Serialize)]
struct TrainBody {
    method: AdapterKind,
    basis_indices: Option<Vec<usize>>,
    final_mse: f64,
    eval_mse: f64,
    frozen_unchanged: bool,
    trace: TraceSummary,
    cost: CostReport,
    quantization: Option<RoundtripStats>,
}

/// The basis for an SBoRA adapter: the task's support (matched), `r`
/// indices outside it (mismatched), or a seeded draw (random).
fn choose_basis<T: Scalar>(ts: &TrainSettings, task: &SyntheticTask<T>) -> Result<Option<BasisIndexSet>, CliError> {
    let (dim, own_side) = match ts.method {
        AdapterKind::Lora => return Ok(None),
        AdapterKind::SboraFa => (ts.k, TaskKind::TeacherStudentColumns),
        AdapterKind::SboraFb => (ts.d, TaskKind::TeacherStudentRows),
    };
    if ts.basis == BasisMode::Random {
        return Ok(Some(BasisIndexSet::sample(dim, ts.r, ts.seed)?));
    }
    let support = match (&task.support, task.kind == own_side) {
        (Some(s), true) => s,
        _ => {
            return Err(CliError::Usage(format!(
                "basis={:?} needs a {} task for {}",
                ts.basis,
                own_side,
                ts.method
            )))
        }
    };
    if ts.basis == BasisMode::Matched {
        return Ok(Some(support.clone()));
    }
    let outside: Vec<usize> = (0..dim).filter(|&i| !support.contains(i)).collect();
    if outside.len() < ts.r {
        return Err(CliError::Usage(format!(
            "a mismatched basis needs {} indices outside the support, only {} exist",
            ts.r,
            outside.len()
        )));
    }
    let pick = BasisIndexSet::sample(outside.len(), ts.r, ts.seed)?;
    let indices = pick.indices().iter().map(|&i| outside[i]).collect();
    Ok(Some(BasisIndexSet::new(dim, indices)?))
}

fn train_typed<T: Scalar>(s: &Settings, ts: &TrainSettings, out: &mut dyn Write) -> Result<i32, CliError> {
    let task = make_task::<T>(ts.task, ts.d, ts.k, ts.r, ts.seed, ts.noise)?;
    let (w0, quantization) = match ts.quant_block {
        Some(block) => {
            let q = quant::quantize(&task.w0, block)?;
            let stats = quant::roundtrip_stats(&task.w0, &q);
            (quant::dequantize::<T>(&q), Some(stats))
        }
        None => (task.w0.clone(), None),
    };
    let basis = choose_basis(ts, &task)?;
    let mut layer = match (ts.method, basis.clone()) {
        (AdapterKind::SboraFa, Some(b)) => AdapterLayer::sbora_fa(w0.clone(), b)?,
        (AdapterKind::SboraFb, Some(b)) => AdapterLayer::sbora_fb(w0.clone(), b)?,
        _ => AdapterLayer::lora(w0.clone(), ts.r, ts.seed)?,
    };
    if let Some(alpha) = ts.alpha {
        layer = layer.with_alpha(alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let trace = match run_training(&mut layer, &task, &ts.cfg) {
        Ok(t) => t,
        Err(e @ SboraError::Diverged { .. }) => {
            return Err(CliError::Failure(format!(
                "{e}; try a smaller lr (currently {}) or the adam optimizer",
                ts.cfg.lr
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let frozen_unchanged = layer.w0().data().iter().zip(w0.data()).all(|(a, b)| a.bits_eq(*b))
        && layer.basis() == basis.as_ref();

    std::fs::create_dir_all(&ts.out)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", ts.out.display())))?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    write_file(&ts.out.join("trace.csv"), &csv)?;
    write_file(&ts.out.join("adapter.sbora"), &checkpoint::encode_adapter(layer.adapter())?)?;
    write_file(&ts.out.join("w0.sbora"), &checkpoint::encode_base(layer.w0())?)?;

    let body = TrainBody {
        method: ts.method,
        basis_indices: basis.map(|b| b.indices().to_vec()),
        final_mse: population_mse(&layer, &task),
        eval_mse: eval(&layer, &task, ts.eval_samples, ts.seed.wrapping_add(1))?,
        frozen_unchanged,
        trace: trace.summary(),
        cost: analytic_cost(ts.method, ts.d as u64, ts.k as u64, ts.r as u64)?,
        quantization,
    };
    let json = to_json("train", s, body)?;
    write_file(&ts.out.join("summary.json"), json.as_bytes())?;
    out.write_all(json.as_bytes())?;
    Ok(if frozen_unchanged { EXIT_OK } else { EXIT_FAILURE })
}

pub(super) fn train(mut s: Settings, out: &mut dyn Write) -> Result<i32, CliError> {
    let method: AdapterKind = s.get("method", "sbora-fa")?;
    let task: TaskKind = s.get("task", "columns")?;
    let basis: BasisMode = s.get("basis", "matched")?;
    let d = s.dim("d", "8")?;
    let k = s.dim("k", "8")?;
    let r: usize = s.get("r", "2")?;
    check_rank(d, k, r)?;
    let seed: u64 = s.get("seed", "0")?;
    let optimizer = match s.get::<String>("optimizer", "adam")?.as_str() {
        "sgd" => OptimizerKind::Sgd,
        "adam" => OptimizerKind::Adam {
            beta1: s.get("beta1", "0.9")?,
            beta2: s.get("beta2", "0.999")?,
            eps: s.get("adam_eps", "1e-8")?,
        },
        other => return Err(CliError::Usage(format!("optimizer must be sgd or adam, got '{other}'"))),
    };
    let schedule = match s.get::<String>("schedule", "constant")?.as_str() {
        "constant" => LrSchedule::Constant,
        "linear" => LrSchedule::Linear,
        other => return Err(CliError::Usage(format!("schedule must be constant or linear, got '{other}'"))),
    };
    let cfg = TrainConfig {
        steps: s.get("steps", "2000")?,
        batch_size: s.dim("batch_size", "32")?,
        lr: s.get("lr", "0.01")?,
        optimizer,
        schedule,
        seed,
    };
    cfg.validate()?;
    let noise: f64 = s.get("noise", "0")?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::Usage(format!("noise must be a nonnegative number, got {noise}")));
    }
    let precision = precision(&mut s)?;
    let alpha: Option<f64> = s.opt("alpha")?;
    let quant_block: Option<usize> = s.opt("quant_block")?;
    if quant_block == Some(0) {
        return Err(CliError::Usage("quant_block must be positive".into()));
    }
    let eval_samples = s.dim("eval_samples", "4096")?;
    let out_dir: PathBuf = s.required("out")?;
    let ts = TrainSettings {
        method,
        task,
        basis,
        d,
        k,
        r,
        seed,
        noise,
        alpha,
        quant_block,
        eval_samples,
        cfg,
        out: out_dir,
    };
    match precision {
        Precision::F32 => train_typed::<f32>(&s, &ts, out),
        Precision::F64 => train_typed::<f64>(&s, &ts, out),
    }
}

// -------------------------------------------------------------------- bench

#[derive(Serialize)]
struct BenchBody {
    rows: usize,
    mismatches: usize,
    csv: String,
}

pub(super) fn bench(mut s: Settings, out: &mut dyn Write) -> Result<i32, CliError> {
    let kinds = methods(&mut s)?;
    let mut axis = |key: &str| -> Result<Vec<u64>, CliError> {
        let raw: String = s.get(key, "1..16")?;
        parse_grid(key, &raw)
    };
    let (ds, ks, rs) = (axis("d")?, axis("k")?, axis("r")?);
    let target: Option<PathBuf> = s.opt("out")?;
    let rows = sweep(&kinds, &ds, &ks, &rs)?;
    let mismatches = rows.iter().filter(|r| !r.matches()).count();
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    match target {
        Some(path) => {
            write_file(&path, &csv)?;
            let body = BenchBody {
                rows: rows.len(),
                mismatches,
                csv: path.display().to_string(),
            };
            emit(out, "bench", &s, body)?;
        }
        None => out.write_all(&csv)?,
    }
    Ok(if mismatches == 0 { EXIT_OK } else { EXIT_FAILURE })
}

// -------------------------------------------------------------------- merge

#[derive(Serialize)]
struct MergeBody {
    d: usize,
    k: usize,
    adapters: Vec<MergedAdapter>,
    /// Entries inside the union of the adapters' update regions.
    region_fraction: f64,
    /// Entries whose bits differ from the base.
    changed_fraction: f64,
    changes_within_region: bool,
}

#[derive(Serialize)]
struct MergedAdapter {
    method: AdapterKind,
    rank: usize,
    lambda: f64,
    basis_indices: Option<Vec<usize>>,
}

fn merge_typed<T: Scalar>(
    s: &Settings,
    base: &Path,
    paths: &[PathBuf],
    lambdas: &[f64],
    target: &Path,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let w0 = checkpoint::load_base::<T>(base)?;
    let mut adapters = Vec::with_capacity(paths.len());
    for (path, &lambda) in paths.iter().zip(lambdas) {
        let ad = checkpoint::load_adapter::<T>(path)
            .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
        adapters.push((ad, T::of(lambda)));
    }
    let model = CombinedModel::new(w0, adapters)?;
    let merged = model.merge();
    let (d, k) = merged.shape();

    let mut region = vec![false; d * k];
    for (ad, _) in model.adapters() {
        for i in 0..d {
            for j in 0..k {
                region[i * k + j] |= match (ad.kind(), ad.basis()) {
                    (AdapterKind::SboraFa, Some(b)) => b.contains(j),
                    (AdapterKind::SboraFb, Some(b)) => b.contains(i),
                    _ => true,
                };
            }
        }
    }
    let changed: Vec<bool> = merged
        .data()
        .iter()
        .zip(model.w0().data())
        .map(|(a, b)| !a.bits_eq(*b))
        .collect();
    let total = (d * k) as f64;
    let body = MergeBody {
        d,
        k,
        adapters: model
            .adapters()
            .iter()
            .map(|(ad, l)| MergedAdapter {
                method: ad.kind(),
                rank: ad.rank(),
                lambda: l.as_f64(),
                basis_indices: ad.basis().map(|b| b.indices().to_vec()),
            })
            .collect(),
        region_fraction: region.iter().filter(|&&x| x).count() as f64 / total,
        changed_fraction: changed.iter().filter(|&&x| x).count() as f64 / total,
        changes_within_region: changed.iter().zip(&region).all(|(&c, &r)| !c || r),
    };
    write_file(target, &checkpoint::encode_base(&merged)?)?;
    let ok = body.changes_within_region;
    emit(out, "merge", s, body)?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

pub(super) fn merge(mut s: Settings, out: &mut dyn Write) -> Result<i32, CliError> {
    let base: PathBuf = s.required("base")?;
    let paths: Vec<PathBuf> = s.list("adapters", "")?;
    let ones = vec!["1"; paths.len()].join(",");
    let lambdas: Vec<f64> = s.list("lambdas", &ones)?;
    if lambdas.len() != paths.len() {
        return Err(CliError::Usage(format!(
            "{} lambdas given for {} adapters",
            lambdas.len(),
            paths.len()
        )));
    }
    let target: PathBuf = s.required("out")?;
    let bytes = std::fs::read(&base).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", base.display())))?;
    match read_header(&bytes)?.precision {
        Precision::F32 => merge_typed::<f32>(&s, &base, &paths, &lambdas, &target, out),
        Precision::F64 => merge_typed::<f64>(&s, &base, &paths, &lambdas, &target, out),
    }
}

// ----------------------------------------------------------------- quantize

#[derive(Serialize)]
struct QuantizeBody {
    rows: usize,
    cols: usize,
    block_size: usize,
    blocks: usize,
    stats: RoundtripStats,
    within_half_gap: bool,
    idempotent: bool,
    dense_bytes: usize,
    quantized_bytes: usize,
}

fn quantize_typed<T: Scalar>(s: &Settings, w: &Matrix<T>, block: usize, target: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let q: QuantizedMatrix = quant::quantize(w, block)?;
    let stats = quant::roundtrip_stats(w, &q);
    let again = quant::quantize(&quant::dequantize::<T>(&q), block)?;
    let body = QuantizeBody {
        rows: q.rows(),
        cols: q.cols(),
        block_size: block,
        blocks: q.absmax().len(),
        stats,
        within_half_gap: stats.max_abs_err <= stats.half_gap_bound,
        idempotent: again == q,
        dense_bytes: w.data().len() * T::PRECISION.bytes(),
        quantized_bytes: q.storage_bytes(),
    };
    write_file(target, &quant::encode(&q)?)?;
    let ok = body.within_half_gap && body.idempotent;
    emit(out, "quantize", s, body)?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

pub(super) fn quantize(mut s: Settings, out: &mut dyn Write) -> Result<i32, CliError> {
    let input: Option<PathBuf> = s.opt("input")?;
    let block = s.dim("block_size", "64")?;
    let target: PathBuf = s.required("out")?;
    match input {
        Some(path) => {
            let bytes = std::fs::read(&path).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
            match read_header(&bytes)?.precision {
                Precision::F32 => {
                    let w = checkpoint::load_base::<f32>(&path)?;
                    quantize_typed(&s, &w, block, &target, out)
                }
                Precision::F64 => {
                    let w = checkpoint::load_base::<f64>(&path)?;
                    quantize_typed(&s, &w, block, &target, out)
                }
            }
        }
        None => {
            let d = s.dim("d", "64")?;
            let k = s.dim("k", "64")?;
            let seed: u64 = s.get("seed", "0")?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Matrix::<f64>::random_normal(d, k, 1.0 / (k as f64).sqrt(), &mut rng)?;
            quantize_typed(&s, &w, block, &target, out)
        }
    }
}
