//! Subcommand implementations. Each returns its output as a value; `main`
//! decides where it goes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ampkin::amputation::{apply_mask, AmputationLabel, Limb};
use ampkin::annotations::{emit_record, validate_record, AnnotationRecord};
use ampkin::body_model::{forward, write_obj, BodyTemplate, PoseParams, ShapeParams};
use ampkin::metrics::{
    confusion_stats, mpjpe, mve, pa_mpjpe, surviving_vertices, ConfusionMatrix, ConfusionStats,
    JointSet,
};
use ampkin::synth::{
    composite_overlay, default_noise_sigma, inject_keypoint_noise, project_weak_perspective,
    rasterize_heatmaps, WeakPerspectiveCamera,
};
use ampkin::tokenizer::{
    quantize, switch_and_decode, soft_decode, Codebook, CodebookKind, LatentTokens, TokenLogits,
};
use ampkin::{Error, NUM_JOINTS};
use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, DecodeMode};
use crate::error::{CliError, CliResult, RecordViolations};
use crate::sample;

/// Loaded configuration plus the body template it names.
pub struct Context {
    pub config: Config,
    pub strict: bool,
    pub template: BodyTemplate,
    face_colors: Vec<[u8; 3]>,
}

impl Context {
    pub fn new(config: Config, strict: bool) -> CliResult<Self> {
        config.validate()?;
        let template = match &config.template.path {
            Some(p) => config.template.load().map_err(CliError::in_file(p))?,
            None => config.template.load()?,
        };
        let dominant: Vec<usize> = template
            .skin_weights()
            .iter()
            .map(|w| (0..NUM_JOINTS).fold(0, |best, j| if w[j] > w[best] { j } else { best }))
            .collect();
        let face_colors = template
            .faces()
            .iter()
            .map(|f| sample::joint_color(dominant[f[0]]))
            .collect();
        Ok(Context {
            config,
            strict,
            template,
            face_colors,
        })
    }
}

// ---------------------------------------------------------------------------
// JSON lines

pub fn read_records(path: &Path, strict: bool) -> CliResult<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .map_err(CliError::in_file(path))?;
    parse_records(&text, strict).map_err(CliError::in_file(path))
}

/// One record per non-blank line. Parse offsets are relative to the whole text.
pub fn parse_records(text: &str, strict: bool) -> ampkin::Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let line_start = start;
        start += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let rec = AnnotationRecord::from_json(line, strict).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset: line_start + offset,
                message: format!("line {}: {message}", n + 1),
            },
            Error::Schema(m) => Error::Schema(format!("line {}: {m}", n + 1)),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> CliResult<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item).map_err(|e| Error::from(std::io::Error::from(e)))?;
        w.write_all(b"\n").map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(Error::from)
        .map_err(CliError::in_file(path))
}

fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .map_err(CliError::in_file(path))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("expected an array of numeric rows: {e}")))
        .map_err(CliError::in_file(path))?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::in_file(path)(Error::Schema(
            "rows must be non-empty and of equal length".into(),
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn points(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

// ---------------------------------------------------------------------------
// forward / amputate / export-obj

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshOutput {
    pub image: String,
    pub vertices: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
}

/// Masked pose and shape of each record, or a single rest pose without input.
fn poses(ctx: &Context, input: Option<&Path>) -> CliResult<Vec<(String, PoseParams, ShapeParams)>> {
    match input {
        None => Ok(vec![(String::new(), PoseParams::identity(), ShapeParams::default())]),
        Some(p) => read_records(p, ctx.strict)?
            .into_iter()
            .map(|r| Ok((r.image_ref.clone(), r.pose()?, r.shape()?)))
            .collect(),
    }
}

pub fn cmd_forward(ctx: &Context, input: Option<&Path>) -> CliResult<Vec<MeshOutput>> {
    let items = poses(ctx, input)?;
    Ok(items
        .par_iter()
        .map(|(image, pose, shape)| {
            let mesh = forward(&ctx.template, pose, shape);
            MeshOutput {
                image: image.clone(),
                vertices: points(&mesh.vertices),
                joints: points(&mesh.joints_posed),
            }
        })
        .collect())
}

/// Re-labels records with the union of their own and the given amputation
/// (deeper level wins per limb). Without input, starts from the rest pose.
pub fn cmd_amputate(
    ctx: &Context,
    label: &AmputationLabel,
    input: Option<&Path>,
) -> CliResult<Vec<AnnotationRecord>> {
    let size = (ctx.config.synth.width, ctx.config.synth.height);
    let base = match input {
        Some(p) => read_records(p, ctx.strict)?,
        None => {
            let cam = WeakPerspectiveCamera::new(1.0, 0.0, 0.0)?;
            vec![emit_record(
                &ctx.template,
                &PoseParams::identity(),
                &ShapeParams::default(),
                &AmputationLabel::intact(),
                &cam,
                "",
                size,
            )?]
        }
    };
    let out: ampkin::Result<Vec<_>> = base
        .par_iter()
        .map(|rec| {
            let old = rec.amputation.levels();
            let new = label.levels();
            let merged = AmputationLabel::new(std::array::from_fn(|i| old[i].max(new[i])))?;
            emit_record(
                &ctx.template,
                &rec.unmasked_pose()?,
                &rec.shape()?,
                &merged,
                &rec.camera,
                &rec.image_ref,
                size,
            )
        })
        .collect();
    Ok(out?)
}

pub fn cmd_export_obj(
    ctx: &Context,
    input: Option<&Path>,
    index: usize,
    label: Option<&AmputationLabel>,
    w: &mut impl Write,
) -> CliResult<()> {
    let items = poses(ctx, input)?;
    let (_, pose, shape) = items.get(index).ok_or_else(|| {
        Error::InvalidInput(format!("record {index} out of range ({} records)", items.len()))
    })?;
    let pose = label.map_or(*pose, |l| apply_mask(pose, l));
    let mesh = forward(&ctx.template, &pose, shape);
    write_obj(w, &mesh.vertices, ctx.template.faces()).map_err(Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// quantize

#[derive(Debug, Clone, Default)]
pub struct QuantizeArgs {
    pub latents: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub amp_codebook: Option<PathBuf>,
    pub y_hat: Option<[u8; 4]>,
    pub update: bool,
    pub codebook_out: Option<PathBuf>,
    pub decode: Option<DecodeMode>,
}

fn load_codebook(ctx: &Context, path: Option<&Path>, kind: CodebookKind, seed: u64) -> CliResult<Codebook> {
    let t = &ctx.config.tokenizer;
    match path {
        Some(p) => Codebook::load(p).map_err(CliError::in_file(p)),
        None => Ok(Codebook::random(t.codebook_size, t.dim, kind, seed)?),
    }
}

/// Hard quantization of latents (optionally followed by an EMA step and a
/// dead-code reset), or decoding of token logits with codebook switching.
pub fn cmd_quantize(ctx: &Context, args: &QuantizeArgs) -> CliResult<serde_json::Value> {
    let t = &ctx.config.tokenizer;
    let seed = ctx.config.seed;
    let mut cb = load_codebook(ctx, args.codebook.as_deref(), CodebookKind::NonAmp, seed)?;
    let mut out = serde_json::Map::new();

    if let Some(path) = &args.latents {
        let z = LatentTokens::new(read_matrix(path)?)?;
        let q = quantize(&z, &cb)?;
        out.insert("indices".into(), json!(q.indices));
        out.insert("z_tilde".into(), json!(matrix_rows(&q.z_tilde)));
        if args.update {
            cb.ema_update(&z, &q.indices, t.gamma)?;
            let reset = cb.reset_dead_codes(&z, t.reset_threshold, seed)?;
            out.insert("reset".into(), json!(reset));
        }
    }

    if let Some(path) = &args.logits {
        let logits = TokenLogits::new(read_matrix(path)?)?;
        let mode = args.decode.unwrap_or(t.decode);
        let (used, decoded) = match args.y_hat {
            None => (cb.kind(), decode(&logits, &cb, mode)?),
            Some(y_hat) => {
                let amp = load_codebook(
                    ctx,
                    args.amp_codebook.as_deref(),
                    CodebookKind::Amp,
                    seed.wrapping_add(1),
                )?;
                match mode {
                    DecodeMode::Soft => {
                        let (z, kind) = switch_and_decode(&logits, &y_hat, &amp, &cb)?;
                        (kind, z.matrix().clone())
                    }
                    DecodeMode::Hard => {
                        // same kind check and predicate as the soft path
                        let (_, kind) = switch_and_decode(&logits, &y_hat, &amp, &cb)?;
                        let chosen = if kind == CodebookKind::Amp { &amp } else { &cb };
                        (kind, decode(&logits, chosen, mode)?)
                    }
                }
            }
        };
        out.insert("codebook".into(), json!(used));
        out.insert("decode".into(), json!(mode));
        out.insert("latents".into(), json!(matrix_rows(&decoded)));
    }

    if args.latents.is_none() && args.logits.is_none() {
        return Err(Error::InvalidInput("quantize needs --latents or --logits".into()).into());
    }
    if let Some(p) = &args.codebook_out {
        cb.save(p).map_err(CliError::in_file(p))?;
    }
    Ok(serde_json::Value::Object(out))
}

fn decode(logits: &TokenLogits, cb: &Codebook, mode: DecodeMode) -> ampkin::Result<DMatrix<f64>> {
    match mode {
        DecodeMode::Soft => Ok(soft_decode(logits, cb)?.matrix().clone()),
        DecodeMode::Hard => {
            let l = logits.matrix();
            if l.ncols() != cb.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} logits per token for {} codes",
                    l.ncols(),
                    cb.len()
                )));
            }
            let mut out = DMatrix::zeros(l.nrows(), cb.dim());
            for (i, row) in l.row_iter().enumerate() {
                // first maximum wins
                let m = (0..row.len()).fold(0, |best, m| if row[m] > row[best] { m } else { best });
                out.row_mut(i).copy_from(&cb.codes().row(m));
            }
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub image: String,
    pub mve_mm: f64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub mve_mm: f64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimbReport {
    pub counts: Vec<Vec<u64>>,
    #[serde(flatten)]
    pub stats: ConfusionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub mean: MeanMetrics,
    /// Per-limb 4-class confusion, rows = ground truth level.
    pub classification: BTreeMap<String, LimbReport>,
}

const MM: f64 = 1000.0;

fn evaluate_pair(ctx: &Context, pred: &AnnotationRecord, gt: &AnnotationRecord) -> ampkin::Result<SampleMetrics> {
    let include = ctx.config.metrics.include_amputated;
    let valid: Vec<bool> = if include {
        vec![true; NUM_JOINTS]
    } else {
        gt.amputation.joint_mask().iter().map(|m| !m).collect()
    };
    let to_mm = |v: Vec<Vector3<f64>>| v.into_iter().map(|p| p * MM).collect::<Vec<_>>();
    let pj = JointSet::new(to_mm(pred.joints()), valid.clone())?;
    let gj = JointSet::new(to_mm(gt.joints()), valid)?;

    let pm = forward(&ctx.template, &pred.pose()?, &pred.shape()?);
    let gm = forward(&ctx.template, &gt.pose()?, &gt.shape()?);
    let keep = (!include).then(|| surviving_vertices(&ctx.template, &gt.amputation));
    Ok(SampleMetrics {
        image: gt.image_ref.clone(),
        mve_mm: mve(&ctx.template, &to_mm(pm.vertices), &to_mm(gm.vertices), keep.as_deref())?,
        mpjpe_mm: mpjpe(&pj, &gj)?,
        pa_mpjpe_mm: pa_mpjpe(&pj, &gj, ctx.config.metrics.alignment)?,
    })
}

pub fn evaluate(ctx: &Context, pred: &[AnnotationRecord], gt: &[AnnotationRecord]) -> CliResult<EvalReport> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Schema(format!(
            "prediction and ground-truth sets must be non-empty and equal in size ({} vs {})",
            pred.len(),
            gt.len()
        ))
        .into());
    }
    let samples = pred
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| {
            evaluate_pair(ctx, p, g).map_err(|e| match e {
                Error::DegenerateGeometry(m) => Error::DegenerateGeometry(format!("record {i}: {m}")),
                other => other,
            })
        })
        .collect::<ampkin::Result<Vec<_>>>()?;

    let n = samples.len() as f64;
    let mean = MeanMetrics {
        mve_mm: samples.iter().map(|s| s.mve_mm).sum::<f64>() / n,
        mpjpe_mm: samples.iter().map(|s| s.mpjpe_mm).sum::<f64>() / n,
        pa_mpjpe_mm: samples.iter().map(|s| s.pa_mpjpe_mm).sum::<f64>() / n,
    };

    let mut classification = BTreeMap::new();
    for limb in Limb::ALL {
        let mut cm = ConfusionMatrix::zeros(4);
        for (p, g) in pred.iter().zip(gt) {
            cm.record(g.amputation.level(limb) as usize, p.amputation.level(limb) as usize);
        }
        let stats = confusion_stats(&cm)?;
        classification.insert(
            limb.key().to_string(),
            LimbReport {
                counts: cm.counts.clone(),
                stats,
            },
        );
    }
    Ok(EvalReport {
        samples,
        mean,
        classification,
    })
}

pub fn cmd_eval(ctx: &Context, pred: &Path, gt: &Path) -> CliResult<EvalReport> {
    let p = read_records(pred, ctx.strict)?;
    let g = read_records(gt, ctx.strict)?;
    evaluate(ctx, &p, &g)
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub count: usize,
    pub records: String,
    pub amputees: usize,
    pub background_ssim: Vec<f64>,
}

pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Draws and writes one sample; returns its record and the background score.
fn synth_one(ctx: &Context, index: usize, out_dir: &Path) -> ampkin::Result<(AnnotationRecord, f64)> {
    let s = &ctx.config.synth;
    let seed = sample_seed(ctx.config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = sample::random_pose(&mut rng);
    let shape = sample::random_shape(&mut rng);
    let label = sample::random_label(&mut rng, s.amputee_fraction);
    let camera = sample::random_camera(&mut rng);
    let size = (s.width, s.height);

    let name = format!("{index:05}");
    let image_ref = format!("images/{name}.png");
    let record = emit_record(&ctx.template, &pose, &shape, &label, &camera, &image_ref, size)?;

    let (background, score) = sample::gated_background(seed, size, s.ssim_window, s.ssim_threshold)?;
    let mesh = forward(&ctx.template, &apply_mask(&pose, &label), &shape);
    let projected = project_weak_perspective(&mesh.vertices, &camera, size);
    let depths: Vec<f64> = mesh.vertices.iter().map(|v| v.z).collect();
    let image = composite_overlay(
        &background,
        &projected,
        &depths,
        ctx.template.faces(),
        &ctx.face_colors,
    )?;
    image.save(out_dir.join(&image_ref))?;

    if s.heatmaps {
        let sigma_px = s.noise_sigma.unwrap_or_else(|| default_noise_sigma(&record.bbox));
        let noisy = inject_keypoint_noise(&record.kp2d, s.noise_ratio, sigma_px, s.noise_model, seed)?;
        let maps = rasterize_heatmaps(&noisy, size, s.heatmap_sigma)?;
        maps.save(out_dir.join(format!("heatmaps/{name}.hm")))?;
    }
    Ok((record, score))
}

/// Writes `records.jsonl`, `images/*.png` and, when enabled,
/// `heatmaps/*.hm` under `out_dir`.
pub fn cmd_synth(ctx: &Context, count: usize, out_dir: &Path) -> CliResult<SynthSummary> {
    let io = |e: std::io::Error| CliError::in_file(out_dir)(e.into());
    fs::create_dir_all(out_dir.join("images")).map_err(io)?;
    if ctx.config.synth.heatmaps {
        fs::create_dir_all(out_dir.join("heatmaps")).map_err(io)?;
    }
    let results = (0..count)
        .into_par_iter()
        .map(|i| synth_one(ctx, i, out_dir))
        .collect::<ampkin::Result<Vec<_>>>()?;
    let (records, background_ssim): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let path = out_dir.join("records.jsonl");
    write_jsonl(&mut create_file(&path)?, &records)?;
    Ok(SynthSummary {
        count,
        records: path.display().to_string(),
        amputees: records.iter().filter(|r| r.amputation.is_amputee()).count(),
        background_ssim,
    })
}

// ---------------------------------------------------------------------------
// validate

/// Number of records checked; any violation is reported as an error.
pub fn validate_records(ctx: &Context, records: &[AnnotationRecord]) -> CliResult<usize> {
    let failures: Vec<RecordViolations> = records
        .par_iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let violations = validate_record(r, Some(&ctx.template));
            (!violations.is_empty()).then(|| RecordViolations {
                record: i,
                image: r.image_ref.clone(),
                violations,
            })
        })
        .collect();
    if failures.is_empty() {
        Ok(records.len())
    } else {
        Err(CliError::Validation(failures))
    }
}

pub fn cmd_validate(ctx: &Context, input: &Path) -> CliResult<usize> {
    let records = read_records(input, ctx.strict)?;
    validate_records(ctx, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Context {
        let mut config = Config::default();
        config.template.toy_vertices = 256;
        Context::new(config, true).unwrap()
    }

    #[test]
    fn amputate_rest_pose() {
        let ctx = ctx();
        let label: AmputationLabel = "Rleg:2".parse().unwrap();
        let out = cmd_amputate(&ctx, &label, None).unwrap();
        let masked: Vec<usize> = (0..NUM_JOINTS).filter(|&j| out[0].pose_mask[j]).collect();
        assert_eq!(masked, vec![5, 8, 11]);
        assert_eq!(validate_records(&ctx, &out).unwrap(), 1);
    }

    #[test]
    fn eval_identical_sets_is_zero() {
        let ctx = ctx();
        let label: AmputationLabel = "Larm:1".parse().unwrap();
        let recs = cmd_amputate(&ctx, &label, None).unwrap();
        let report = evaluate(&ctx, &recs, &recs).unwrap();
        assert_eq!(report.mean.mve_mm, 0.0);
        assert_eq!(report.mean.mpjpe_mm, 0.0);
        assert!(report.mean.pa_mpjpe_mm < 1e-8);
        assert_eq!(report.classification["Larm"].counts[1][1], 1);
        assert_eq!(report.classification["Larm"].stats.accuracy, 1.0);
    }

    #[test]
    fn corrupted_record_fails_validation() {
        let ctx = ctx();
        let label: AmputationLabel = "Rleg:2".parse().unwrap();
        let mut recs = cmd_amputate(&ctx, &label, None).unwrap();
        recs[0].kp2d[8] = [3.0, 4.0, 1.0];
        let err = validate_records(&ctx, &recs).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let j = err.to_json();
        assert_eq!(j["error"], "validation");
        assert_eq!(j["records"][0]["violations"][0]["joints"][0], 8);
    }

    #[test]
    fn jsonl_offsets_span_lines() {
        let ctx = ctx();
        let recs = cmd_amputate(&ctx, &AmputationLabel::intact(), None).unwrap();
        let first = recs[0].to_json();
        let text = format!("{first}\n\n{{\"image\": ]\n");
        match parse_records(&text, true) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, first.len() + 2 + 10);
                assert!(message.starts_with("line 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(parse_records(&format!("{first}\n"), true).unwrap(), recs);
    }

    #[test]
    fn hard_decode_picks_argmax_code() {
        let cb = Codebook::random(5, 3, CodebookKind::NonAmp, 1).unwrap();
        let logits = TokenLogits::new(DMatrix::from_row_slice(2, 5, &[
            0.0, 3.0, 1.0, 3.0, 0.0,
            -1.0, -2.0, -3.0, -4.0, 0.5,
        ]))
        .unwrap();
        let out = decode(&logits, &cb, DecodeMode::Hard).unwrap();
        assert_eq!(out.row(0), cb.codes().row(1));
        assert_eq!(out.row(1), cb.codes().row(4));
    }
}
