use std::io::Write;
use std::path::{Path, PathBuf};

use uwsim::detloss::{LossVariant, Scene};
use uwsim::fitting::{finite_diff_check, fit, FitConfig, Manifest, Sample, GRAD_TOLERANCE};
use uwsim::imaging::{load_depth, load_rgb, save_rgb, write_atomic, Format};
use uwsim::metrics::evaluate;
use uwsim::physics::synthesize;
use uwsim::{Error, PhysicalParams, Result};

use crate::config::{RunConfig, DEFAULT_SEED};
use crate::{
    Cli, Command, DetlossArgs, EvaluateArgs, FitArgs, GradcheckArgs, SynthesizeArgs, Variant,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::NumericAbort { .. } => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

struct Globals {
    config: RunConfig,
    seed: u64,
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<u8> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let g = Globals {
        config,
        seed,
        out: cli.out,
    };
    match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&g, a),
        Command::Fit(a) => cmd_fit(g, a),
        Command::Evaluate(a) => cmd_evaluate(&g, a),
        Command::Detloss(a) => cmd_detloss(g, a),
        Command::Gradcheck(a) => cmd_gradcheck(&g, a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_params(path: &Path) -> Result<PhysicalParams> {
    PhysicalParams::from_json_str(&read_text(path)?)
}

fn require_out(g: &Globals, what: &str) -> Result<PathBuf> {
    g.out
        .clone()
        .ok_or_else(|| Error::InvalidParameter(format!("--out is required for {what}")))
}

/// Writes to `--out` when given, otherwise to standard output.
fn emit(g: &Globals, text: &str) -> Result<()> {
    match &g.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_synthesize(g: &Globals, a: SynthesizeArgs) -> Result<u8> {
    let out = require_out(g, "synthesize")?;
    Format::from_path(&out)?;
    let rgb = load_rgb(&a.rgb)?;
    let depth = load_depth(&a.depth)?;
    let params = load_params(&a.params)?;
    let aux = a.aux.as_deref().map(load_rgb).transpose()?;
    let img = synthesize(&rgb, &depth, &params, aux.as_ref())?;
    save_rgb(&img, &out)?;
    for (l, name) in ["R", "G", "B"].iter().enumerate() {
        eprintln!(
            "{name}: beta={} alpha={} B={}",
            params.beta[l], params.alpha[l], params.big_b[l]
        );
    }
    eprintln!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_fit(g: Globals, a: FitArgs) -> Result<u8> {
    let out = require_out(&g, "fit")?;
    let mut cfg: FitConfig = g.config.fit.clone();
    cfg.seed = g.seed;
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.decay_start {
        cfg.decay_start = v;
    }
    if let Some(v) = a.w2 {
        cfg.w2 = v;
    }
    if a.no_saturation_mask {
        cfg.saturation_mask = false;
    }
    if a.learn_fusion {
        cfg.learn_fusion = true;
    }
    cfg.validate()?;

    let (manifest, base) = Manifest::load(&a.manifest)?;
    let samples = manifest.load_samples(&base)?;
    let init = load_params(&a.init)?;
    let trace = fit(&samples, &init, &cfg)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_atomic(
        &out.join("params.json"),
        trace.params.to_json_string().as_bytes(),
    )?;
    write_atomic(&out.join("loss.csv"), trace.to_csv()?.as_bytes())?;
    eprintln!(
        "fitted {} pairs over {} epochs, final loss {:.6e}",
        samples.len(),
        cfg.epochs,
        trace.final_loss
    );
    Ok(EXIT_OK)
}

fn is_image(path: &Path) -> bool {
    path.is_file() && matches!(Format::from_path(path), Ok(Format::Ppm | Format::Png))
}

fn list_images(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if is_image(&entry.path()) {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .ppm or .png images"),
        ));
    }
    Ok(names)
}

fn cmd_evaluate(g: &Globals, a: EvaluateArgs) -> Result<u8> {
    let names = list_images(&a.images)?;
    let imgs = names
        .iter()
        .map(|n| load_rgb(a.images.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let refs = match &a.refs {
        Some(dir) => Some(
            names
                .iter()
                .map(|n| load_rgb(dir.join(n)))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let ev = evaluate(&imgs, refs.as_deref(), &g.config.metrics)?;
    emit(g, &ev.to_csv(&names)?)?;
    eprintln!("evaluated {} images", names.len());
    Ok(EXIT_OK)
}

fn cmd_detloss(g: Globals, a: DetlossArgs) -> Result<u8> {
    let scene = Scene::from_json_str(&read_text(&a.scene)?)?;
    let mut grid = g.config.grid.clone();
    if let Some(grids) = scene.grids.clone() {
        grid.grids = grids;
    }
    if let Some(grids) = a.grids {
        grid.grids = grids;
    }
    let variant = match a.variant {
        Variant::Patch => LossVariant::Patch,
        Variant::ObjectFocused => LossVariant::ObjectFocused,
    };
    let report = scene.evaluate(&grid, variant)?;
    let mut json = report.to_json_string();
    json.push('\n');
    emit(&g, &json)?;
    eprintln!(
        "{:?} loss {:.6} over {} patches ({} object)",
        variant, report.total, report.n, report.n_bar
    );
    Ok(EXIT_OK)
}

fn cmd_gradcheck(g: &Globals, a: GradcheckArgs) -> Result<u8> {
    let mut sample = Sample::new(
        load_rgb(&a.rgb)?,
        load_depth(&a.depth)?,
        load_rgb(&a.target)?,
    );
    sample.aux = a.aux.as_deref().map(load_rgb).transpose()?;
    let params = load_params(&a.params)?;
    let report = finite_diff_check(&sample, &params, a.h)?;
    emit(g, &report.to_csv()?)?;
    let failing: Vec<_> = report.failures(GRAD_TOLERANCE).collect();
    eprintln!(
        "{} parameters, max relative error {:.3e}, {} above {GRAD_TOLERANCE:e}",
        report.entries.len(),
        report.max_rel_error(),
        failing.len()
    );
    for e in &failing {
        eprintln!(
            "  {}: analytic {} numeric {}",
            e.name, e.analytic, e.numeric
        );
    }
    Ok(if failing.is_empty() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
