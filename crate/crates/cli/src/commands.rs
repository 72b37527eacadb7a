use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use twinbeam::eprstat::{
    confidence_curve, epr_product, Axis, ConfidenceCurve, EprAxisResult, EprConfig, EprError,
    FieldStats, SIGNIFICANCE,
};
use twinbeam::gfit::{fit_gaussian2d, GaussFitResult};
use twinbeam::report::{
    confidence_plot, json_report, nr_plot, profile_plot, sha256_hex, write_confidence_csv,
    write_json, write_map_csv, write_nr_csv, Provenance, SCHEMA_VERSION,
};
use twinbeam::simgen::{simulate_acquisitions, simulate_coherent_pair};
use twinbeam::specorr::{peak_to_floor, Alignment, CrossCorrMap};
use twinbeam::sqz::{nr_curve, nr_to_db, spectral_nr_predict_pixels, time_domain_nr, NrPoint};
use twinbeam::stackio::{read_stack, rotate180, write_stack, StackSet};
use twinbeam::{AcquisitionSet, AnalysisRegion, FieldMode};

use crate::config::{FieldSim, RunConfig, Source};
use crate::error::{fail, CliResult, Stage, StageExt};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub prov: Provenance,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        let prov = Provenance::new(&cfg.canonical_bytes(), cfg.seed);
        Self { cfg, out, prov }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).stage(Stage::Output)?;
    }
    let file =
        File::create(path).map_err(|e| fail(Stage::Output, format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| fail(Stage::Output, format!("{}: {e}", path.display())))
}

fn emit_json<T: Serialize>(ctx: &Ctx, name: &str, kind: &str, payload: &T) -> CliResult<()> {
    let value = json_report(kind, &ctx.prov, payload);
    write_with(&ctx.path(name), |w| write_json(w, &value))
}

fn emit_text(ctx: &Ctx, name: &str, text: &str) -> CliResult<()> {
    write_with(&ctx.path(name), |w| w.write_all(text.as_bytes()))
}

const STACK_FILES: [&str; 4] = [
    "probe.tbim",
    "conjugate.tbim",
    "bg_probe.tbim",
    "bg_conj.tbim",
];

#[derive(Serialize)]
struct FileEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

fn save_stacks(dir: &Path, set: &StackSet) -> CliResult<Vec<FileEntry>> {
    let stacks = [
        Some(&set.probe),
        Some(&set.conjugate),
        set.bg_probe.as_ref(),
        set.bg_conj.as_ref(),
    ];
    let mut entries = Vec::new();
    for (name, stack) in STACK_FILES.iter().zip(stacks) {
        let Some(stack) = stack else { continue };
        let mut bytes = Vec::new();
        write_stack(stack, &mut bytes).stage(Stage::Output)?;
        let path = dir.join(name);
        write_with(&path, |w| w.write_all(&bytes))?;
        entries.push(FileEntry {
            name: (*name).into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(entries)
}

fn has_stacks(dir: &Path) -> bool {
    dir.join(STACK_FILES[0]).is_file()
}

/// Loads one field's acquisitions. Far-field conjugate frames are rotated
/// 180° when `rotate_far` is set, so pixel pairs line up without registration.
fn load_field(dir: &Path, stage: Stage, gain: f64) -> CliResult<Vec<AcquisitionSet>> {
    if !has_stacks(dir) {
        return Err(fail(stage, "input missing"));
    }
    let read = |name: &str| -> CliResult<Option<twinbeam::FrameStack>> {
        let path = dir.join(name);
        if !path.is_file() {
            return Ok(None);
        }
        let file =
            File::open(&path).map_err(|e| fail(stage, format!("{}: {e}", path.display())))?;
        read_stack(std::io::BufReader::new(file))
            .map(Some)
            .map_err(|e| fail(stage, format!("{}: {e}", path.display())))
    };
    let probe = read(STACK_FILES[0])?.expect("checked above");
    let conjugate = read(STACK_FILES[1])?.ok_or_else(|| fail(stage, "conjugate stack missing"))?;
    let set = StackSet {
        probe,
        conjugate,
        bg_probe: read(STACK_FILES[2])?,
        bg_conj: read(STACK_FILES[3])?,
    };
    let acqs = set.to_acquisitions().stage(stage)?;
    Ok(if gain == 1.0 {
        acqs
    } else {
        acqs.iter().map(|a| a.with_gain(gain)).collect()
    })
}

pub fn simulate(ctx: &Ctx) -> CliResult<()> {
    let fields: Vec<(&str, &FieldSim)> = [("near", &ctx.cfg.sim.near), ("far", &ctx.cfg.sim.far)]
        .into_iter()
        .filter_map(|(n, f)| f.as_ref().map(|f| (n, f)))
        .collect();
    if fields.is_empty() {
        return Err(fail(Stage::Config, "sim block has no near or far field"));
    }
    for (name, f) in &fields {
        f.params
            .validate()
            .map_err(|e| fail(Stage::Simulate, format!("{name}: {e}")))?;
    }
    let mut manifest = serde_json::Map::new();
    for (name, f) in fields {
        let p = &f.params;
        let acqs = match f.source {
            Source::TwinBeam => simulate_acquisitions(p),
            Source::Coherent => simulate_coherent_pair(p),
        }
        .map_err(|e| fail(Stage::Simulate, format!("{name}: {e}")))?;
        let set = StackSet::from_acquisitions(&acqs, p.pixel_size_s, p.frame_interval, p.exposure)
            .stage(Stage::Simulate)?;
        drop(acqs);
        let dir = match name {
            "near" => ctx.cfg.io.near_dir(&ctx.out),
            _ => ctx.cfg.io.far_dir(&ctx.out),
        };
        let files = save_stacks(&dir, &set)?;
        manifest.insert(
            name.into(),
            json!({
                "source": f.source,
                "directory": dir.strip_prefix(&ctx.out).unwrap_or(&dir),
                "n_acquisitions": p.n_acquisitions,
                "width": p.width,
                "height": p.height,
                "params": p,
                "files": files,
            }),
        );
    }
    emit_json(
        ctx,
        "manifest.json",
        "simulate-manifest",
        &json!({ "fields": manifest }),
    )
}

#[derive(Serialize)]
struct FieldReport {
    alignment: Alignment,
    peak_to_floor: f64,
    fit: Option<GaussFitResult>,
    fit_error: Option<String>,
}

fn field_stats(acqs: &[AcquisitionSet], mode: FieldMode, cfg: &EprConfig) -> CliResult<FieldStats> {
    FieldStats::compute(acqs, mode, &cfg.pipeline).stage(Stage::Epr)
}

fn fit_field(map: &CrossCorrMap, stats: &FieldStats, cfg: &EprConfig) -> FieldReport {
    let (fit, fit_error) = match fit_gaussian2d(map, &cfg.fit) {
        Ok(f) if f.converged => (Some(f), None),
        Ok(_) => (None, Some("fit did not converge".to_string())),
        Err(e) => (None, Some(e.to_string())),
    };
    FieldReport {
        alignment: stats.alignment,
        peak_to_floor: peak_to_floor(map, 3),
        fit,
        fit_error,
    }
}

fn verdict(axes: &[EprAxisResult]) -> &'static str {
    if axes.is_empty() || !axes.iter().any(|a| a.violation) {
        "no violation"
    } else if axes.iter().any(|a| a.significant) {
        "significant violation"
    } else {
        "violation below significance"
    }
}

pub fn analyze_epr(ctx: &Ctx) -> CliResult<()> {
    let a = &ctx.cfg.analysis;
    let near = load_field(&ctx.cfg.io.near_dir(&ctx.out), Stage::NearField, a.gain)?;
    let far = load_field(&ctx.cfg.io.far_dir(&ctx.out), Stage::FarField, a.gain)?;
    let cfg = a.epr_config(&ctx.cfg.optics);
    let ns = field_stats(&near, FieldMode::NearField, &cfg)?;
    let fs = field_stats(&far, FieldMode::FarField, &cfg)?;
    let near_map = ns.map(0..near.len(), &cfg.pipeline).stage(Stage::Epr)?;
    let far_map = fs.map(0..far.len(), &cfg.pipeline).stage(Stage::Epr)?;
    let near_rep = fit_field(&near_map, &ns, &cfg);
    let far_rep = fit_field(&far_map, &fs, &cfg);

    let mut axes = Vec::new();
    let mut failure = near_rep
        .fit_error
        .as_ref()
        .map(|e| format!("near-field fit: {e}"))
        .or_else(|| {
            far_rep
                .fit_error
                .as_ref()
                .map(|e| format!("far-field fit: {e}"))
        });
    if let (Some(nf), Some(ff)) = (&near_rep.fit, &far_rep.fit) {
        for axis in [Axis::X, Axis::Y] {
            match epr_product(nf, ff, &cfg.near_optics, &cfg.far_optics, axis, a.ci_level) {
                Ok(r) => axes.push(r),
                Err(e @ (EprError::Optics(_) | EprError::WrongMode { .. })) => {
                    return Err(fail(Stage::Epr, e.to_string()))
                }
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                    axes.clear();
                    break;
                }
            }
        }
    }

    write_with(&ctx.path("near_map.csv"), |w| {
        write_map_csv(w, &ctx.prov, &near_map)
    })?;
    write_with(&ctx.path("far_map.csv"), |w| {
        write_map_csv(w, &ctx.prov, &far_map)
    })?;
    for (name, title, map, rep) in [
        (
            "near_profile.svg",
            "Near-field correlation",
            &near_map,
            &near_rep,
        ),
        (
            "far_profile.svg",
            "Far-field correlation",
            &far_map,
            &far_rep,
        ),
    ] {
        if let Some(fit) = &rep.fit {
            emit_text(ctx, name, &profile_plot(title, map, &fit.model))?;
        }
    }
    let payload = json!({
        "n_acquisitions": near.len().min(far.len()),
        "normalization": cfg.pipeline.normalization,
        "ci_level": a.ci_level,
        "near": near_rep,
        "far": far_rep,
        "axes": axes,
        "failure": failure,
        "verdict": verdict(&axes),
    });
    emit_json(ctx, "epr_report.json", "epr", &payload)
}

fn nr_region(acqs: &[AcquisitionSet], ctx: &Ctx) -> CliResult<AnalysisRegion> {
    let (w, h) = acqs[0].dims();
    let region = match ctx.cfg.analysis.region {
        Some(r) => r,
        None => {
            let side = ctx.cfg.analysis.pipeline.nr_region;
            AnalysisRegion::centered(w, h, side, side).stage(Stage::Nr)?
        }
    };
    if !region.fits_in(w, h) {
        return Err(fail(
            Stage::Nr,
            format!("region {region:?} outside {w}x{h} frames"),
        ));
    }
    Ok(region)
}

#[derive(Serialize)]
struct NrFieldReport {
    region: AnalysisRegion,
    n_acquisitions: usize,
    raw: Vec<NrPoint>,
    corrected: Option<Vec<NrPoint>>,
    /// Noise ratio at the largest bin.
    plateau: f64,
    plateau_db: Option<f64>,
}

pub fn analyze_nr(ctx: &Ctx) -> CliResult<()> {
    let a = &ctx.cfg.analysis;
    let bins = a.bins.resolve().stage(Stage::Config)?;
    let dirs = [
        ("near", ctx.cfg.io.near_dir(&ctx.out), Stage::NearField),
        ("far", ctx.cfg.io.far_dir(&ctx.out), Stage::FarField),
    ];
    if !dirs.iter().any(|(_, d, _)| has_stacks(d)) {
        return Err(fail(
            Stage::NearField,
            "input missing (no near or far stacks)",
        ));
    }
    let mut fields = serde_json::Map::new();
    let mut plateaus = Vec::new();
    for (name, dir, stage) in dirs {
        if !has_stacks(&dir) {
            continue;
        }
        let mut acqs = load_field(&dir, stage, a.gain)?;
        if name == "far" {
            acqs = acqs
                .iter()
                .map(|q| q.map_conjugate(|f| Ok(rotate180(f))))
                .collect::<Result<_, _>>()
                .stage(stage)?;
        }
        let region = nr_region(&acqs, ctx)?;
        let raw = nr_curve(&acqs, &region, &bins, false).stage(Stage::Nr)?;
        let corrected = if acqs.iter().all(AcquisitionSet::has_background) {
            Some(nr_curve(&acqs, &region, &bins, true).stage(Stage::Nr)?)
        } else {
            None
        };
        let plateau = raw.last().map_or(f64::NAN, |p| p.nr);
        plateaus.push(plateau);

        let mut all = raw.clone();
        all.extend(corrected.iter().flatten().copied());
        write_with(&ctx.path(&format!("nr_{name}.csv")), |w| {
            write_nr_csv(w, &ctx.prov, &all)
        })?;
        let mut curves: Vec<(&str, &[NrPoint])> = vec![("raw", &raw)];
        if let Some(c) = &corrected {
            curves.push(("background corrected", c));
        }
        emit_text(
            ctx,
            &format!("nr_{name}.svg"),
            &nr_plot(&format!("Noise ratio, {name} field"), &curves),
        )?;
        let report = NrFieldReport {
            region,
            n_acquisitions: acqs.len(),
            raw,
            corrected,
            plateau,
            plateau_db: nr_to_db(plateau).ok(),
        };
        fields.insert(
            name.into(),
            serde_json::to_value(report).expect("serializable"),
        );
    }
    let inseparability =
        (plateaus.len() == 2).then(|| twinbeam::eprstat::inseparability(plateaus[0], plateaus[1]));
    let payload = json!({
        "bins": bins,
        "fields": fields,
        "inseparability": inseparability,
    });
    emit_json(ctx, "nr_report.json", "noise-ratio", &payload)
}

/// Smallest group size whose mean confidence exceeds the significance level.
fn first_significant(curve: &ConfidenceCurve) -> Option<usize> {
    curve
        .entries
        .iter()
        .filter(|e| e.mean_c > SIGNIFICANCE)
        .map(|e| e.n)
        .min()
}

pub fn confidence(ctx: &Ctx) -> CliResult<()> {
    let a = &ctx.cfg.analysis;
    let near = load_field(&ctx.cfg.io.near_dir(&ctx.out), Stage::NearField, a.gain)?;
    let far = load_field(&ctx.cfg.io.far_dir(&ctx.out), Stage::FarField, a.gain)?;
    let cfg = a.epr_config(&ctx.cfg.optics);
    let curves = confidence_curve(&near, &far, &a.group_sizes, &cfg).stage(Stage::Confidence)?;
    let total = near.len().min(far.len());
    let groups: Vec<Value> = a
        .group_sizes
        .iter()
        .map(|&n| json!({ "n": n, "groups": total / n, "unused": total % n }))
        .collect();
    for g in &groups {
        if g["unused"] != 0 {
            eprintln!(
                "confidence: N = {} leaves {} of {total} acquisitions unused",
                g["n"], g["unused"]
            );
        }
    }
    let first: serde_json::Map<String, Value> = curves
        .iter()
        .map(|c| {
            let axis = serde_json::to_value(c.axis).expect("axis");
            (
                axis.as_str().unwrap_or("?").to_string(),
                json!(first_significant(c)),
            )
        })
        .collect();
    write_with(&ctx.path("confidence.csv"), |w| {
        write_confidence_csv(w, &ctx.prov, &curves)
    })?;
    emit_text(ctx, "confidence.svg", &confidence_plot(&curves))?;
    let payload = json!({
        "n_acquisitions": total,
        "threshold": SIGNIFICANCE,
        "groups": groups,
        "curves": curves,
        "first_significant_n": first,
    });
    emit_json(ctx, "confidence.json", "confidence-curve", &payload)
}

/// Returns whether the prediction agreed with the time-domain oracle.
pub fn spectral(ctx: &Ctx) -> CliResult<bool> {
    let s = &ctx.cfg.spectral;
    s.model.validate().stage(Stage::Spectral)?;
    s.temporal.validate().stage(Stage::Spectral)?;
    let (prediction, quad) = spectral_nr_predict_pixels(std::slice::from_ref(&s.model), &s.pulse)
        .stage(Stage::Spectral)?;
    let (estimate, se) = time_domain_nr(&s.model, &s.pulse, &s.temporal).stage(Stage::Spectral)?;
    let diff = (prediction - estimate).abs();
    let z = if se > 0.0 {
        diff / se
    } else if diff < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    let agree = z <= s.tolerance_se;
    let payload = json!({
        "model": s.model,
        "pulse": s.pulse,
        "temporal": s.temporal,
        "prediction": prediction,
        "prediction_db": nr_to_db(prediction).ok(),
        "quadrature": quad,
        "time_domain": { "estimate": estimate, "standard_error": se },
        "z_score": if z.is_finite() { json!(z) } else { Value::Null },
        "tolerance_se": s.tolerance_se,
        "agree": agree,
    });
    emit_json(ctx, "spectral_report.json", "spectral", &payload)?;
    Ok(agree)
}

const REPORTS: [&str; 5] = [
    "manifest.json",
    "epr_report.json",
    "nr_report.json",
    "confidence.json",
    "spectral_report.json",
];

fn summary_line(name: &str, v: &Value) -> String {
    let f = |v: &Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.4}"));
    match name {
        "epr_report.json" => {
            let mut s = format!("EPR: {}", v["verdict"].as_str().unwrap_or("?"));
            for ax in v["axes"].as_array().into_iter().flatten() {
                s += &format!(
                    "; {}: product {} hbar^2, C = {}",
                    ax["axis"].as_str().unwrap_or("?"),
                    f(&ax["product_hbar2"]),
                    f(&ax["confidence"])
                );
            }
            s
        }
        "nr_report.json" => {
            let mut s = "noise ratio plateau:".to_string();
            for (field, r) in v["fields"].as_object().into_iter().flatten() {
                s += &format!(" {field} {}", f(&r["plateau"]));
            }
            if v["inseparability"].is_object() {
                s += &format!("; inseparability {}", f(&v["inseparability"]["value"]));
            }
            s
        }
        "confidence.json" => format!(
            "confidence: first N with C > 5: {}",
            v["first_significant_n"]
        ),
        "spectral_report.json" => format!(
            "spectral: prediction {}, time domain {} ± {}, agree {}",
            f(&v["prediction"]),
            f(&v["time_domain"]["estimate"]),
            f(&v["time_domain"]["standard_error"]),
            v["agree"]
        ),
        _ => format!(
            "stacks: {}",
            v["fields"]
                .as_object()
                .map(|m| m.keys().cloned().collect::<Vec<_>>().join(", "))
                .unwrap_or_default()
        ),
    }
}

pub fn report(ctx: &Ctx) -> CliResult<()> {
    let mut found = serde_json::Map::new();
    let mut lines = Vec::new();
    for name in REPORTS {
        let path = ctx.path(name);
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| fail(Stage::Report, format!("{}: {e}", path.display())))?;
        if v["schema"] != SCHEMA_VERSION {
            return Err(fail(
                Stage::Report,
                format!("{}: unsupported schema {}", path.display(), v["schema"]),
            ));
        }
        lines.push(summary_line(name, &v));
        found.insert(name.into(), v);
    }
    if found.is_empty() {
        return Err(fail(
            Stage::Report,
            format!("no analysis outputs in {}", ctx.out.display()),
        ));
    }
    let mut text = String::from("twinbeam run summary\n");
    for l in &lines {
        text += l;
        text.push('\n');
    }
    emit_text(ctx, "summary.txt", &text)?;
    print!("{text}");
    emit_json(ctx, "summary.json", "summary", &json!({ "reports": found }))
}
