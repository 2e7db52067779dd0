use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use glam::DVec3;
use grainlight::compare::{compare_methods, theta_grid_deg, ComparisonSettings};
use grainlight::geometry::Aabb;
use grainlight::goa::{goa_absorption_cross_section, goa_extinction_cross_section, GoaInput, GoaSolver};
use grainlight::medium::CaptureNormalization;
use grainlight::mie::{mie_coefficients, mie_extinction_cross_section, mie_scattering_cross_section, MieInput};
use grainlight::particles::{estimate_local_psd, generate_cloud, LogNormalMode, ParticleCloud, SizeDistribution, RADIUS_LIMITS_UM};
use grainlight::renderer::{render, RenderOutput};
use grainlight::scatter::{HybridPolicy, Method};
use grainlight::scene::{Scene, SceneMedium};
use grainlight::spectrum::{mean_relative_l1, spectral_to_srgb};
use grainlight::{AmplitudePair, ComplexValue};
use sha2::{Digest, Sha256};

use crate::{
    AmplitudesArgs, CaptureArg, Cli, Command, CompareArgs, GenArgs, MethodArg, OpticsArgs, PsdArg, PsdArgs, RenderArgs,
    RenderMode, Spacing, XsecArgs,
};

/// Flag combination rejected before any work starts.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Runs a parsed command; `header` is the provenance line written first in
/// every CSV.
pub fn run(cli: &Cli, header: &str) -> Result<()> {
    match &cli.command {
        Command::Amplitudes(a) => amplitudes(a, header),
        Command::Xsec(a) => xsec(a, header),
        Command::Compare(a) => compare(a, header),
        Command::Gen(a) => gen(a, header),
        Command::Psd(a) => psd(a, header),
        Command::Render(a) => render_scene(a, header),
    }
}

/// `# grainlight <version> flags=<sha256 prefix>` over the raw arguments.
pub fn provenance<I, S>(args: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut hasher = Sha256::new();
    for a in args {
        hasher.update(a.as_ref().as_encoded_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("# grainlight {} flags={hex}", env!("CARGO_PKG_VERSION"))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn csv_out(path: Option<&Path>, header: &str, comments: &[String], columns: &[&str]) -> Result<csv::Writer<Box<dyn Write>>> {
    let mut w = output(path)?;
    writeln!(w, "{header}")?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(columns)?;
    Ok(csv)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

impl OpticsArgs {
    fn validate(&self) -> Result<()> {
        positive("wavelength", self.wavelength)?;
        positive("eta", self.eta)?;
        positive("eta-medium", self.eta_medium)?;
        if !(self.eta_im >= 0.0 && self.eta_im.is_finite()) {
            return Err(usage(format!("--eta-im must be non-negative, got {}", self.eta_im)));
        }
        Ok(())
    }

    fn eta(&self) -> ComplexValue {
        ComplexValue::new(self.eta, self.eta_im)
    }
}

fn resolve_method(method: MethodArg, radius_um: f64, policy: &HybridPolicy) -> Method {
    match method {
        MethodArg::Mie => Method::Mie,
        MethodArg::Goa => Method::Goa,
        MethodArg::Hybrid => policy.method(radius_um),
    }
}

fn log_magnitude(s: ComplexValue) -> f64 {
    s.norm().log10()
}

fn amplitudes(a: &AmplitudesArgs, header: &str) -> Result<()> {
    a.optics.validate()?;
    positive("radius", a.radius)?;
    let thetas = theta_grid_deg(a.theta_step)?;
    let policy = HybridPolicy::new(a.r_switch)?;
    let method = resolve_method(a.method, a.radius, &policy);
    let eta = a.optics.eta();
    let mut comments = Vec::new();
    if a.method == MethodArg::Goa && a.radius < a.r_switch {
        let msg = format!(
            "warning: GOA at r = {} um is below the validity radius {} um; expect large errors",
            a.radius, a.r_switch
        );
        eprintln!("{msg}");
        comments.push(msg);
    }
    let eval: Box<dyn Fn(f64) -> AmplitudePair> = match method {
        Method::Mie => {
            let c = mie_coefficients(&MieInput::in_host(a.radius, a.optics.wavelength, eta, a.optics.eta_medium))?;
            Box::new(move |t| c.amplitudes(t))
        }
        Method::Goa => {
            GoaInput::new(a.radius, a.optics.wavelength, eta, a.optics.eta_medium).with_p_max(a.p_max).validate()?;
            let solver = GoaSolver::new(eta, a.optics.eta_medium, a.p_max)?;
            let (r, l) = (a.radius, a.optics.wavelength);
            Box::new(move |t| solver.amplitudes(r, l, t).amplitudes)
        }
    };
    comments.push(format!("method={method:?}"));
    let mut csv = csv_out(a.out.as_deref(), header, &comments, &["theta_deg", "log10_abs_s1", "log10_abs_s2"])?;
    for t in thetas {
        let s = eval(t.to_radians());
        csv.write_record([format!("{t:.4}"), log_magnitude(s.s1).to_string(), log_magnitude(s.s2).to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn radius_grid(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Result<Vec<f64>> {
    positive("r-min", lo)?;
    positive("r-max", hi)?;
    if lo > hi || count == 0 || (count == 1 && lo != hi) {
        return Err(usage(format!("need r-min <= r-max and count >= 2, got {lo}, {hi}, {count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let f = |k: usize| k as f64 / (count - 1) as f64;
    Ok((0..count)
        .map(|k| match spacing {
            _ if k == count - 1 => hi,
            Spacing::Log => (lo.ln() + (hi.ln() - lo.ln()) * f(k)).exp(),
            Spacing::Linear => lo + (hi - lo) * f(k),
        })
        .collect())
}

fn xsec(a: &XsecArgs, header: &str) -> Result<()> {
    a.optics.validate()?;
    let radii = radius_grid(a.r_min, a.r_max, a.count, a.spacing)?;
    let policy = HybridPolicy::new(a.r_switch)?;
    let eta = a.optics.eta();
    let (l, eta_m) = (a.optics.wavelength, a.optics.eta_medium);
    for &r in &radii {
        if resolve_method(a.method, r, &policy) == Method::Goa {
            GoaInput::new(r, l, eta, eta_m).with_extinction_orders(a.p_set.iter().copied()).validate()?;
        } else {
            MieInput::in_host(r, l, eta, eta_m).validate()?;
        }
    }
    let p_set: Vec<String> = a.p_set.iter().map(usize::to_string).collect();
    let comments = vec![format!("method={:?} p_set={}", a.method, p_set.join(","))];
    let mut csv = csv_out(a.out.as_deref(), header, &comments, &["radius_um", "c_t_um2", "c_s_um2", "c_a_um2"])?;
    for r in radii {
        let (c_t, c_s, c_a) = match resolve_method(a.method, r, &policy) {
            Method::Mie => {
                let input = MieInput::in_host(r, l, eta, eta_m);
                let c = mie_coefficients(&input)?;
                let c_t = mie_extinction_cross_section(&c, &input);
                if eta.im == 0.0 {
                    (c_t, c_t, 0.0)
                } else {
                    let c_s = mie_scattering_cross_section(&c, &input).min(c_t);
                    (c_t, c_s, c_t - c_s)
                }
            }
            Method::Goa => {
                let input = GoaInput::new(r, l, eta, eta_m).with_extinction_orders(a.p_set.iter().copied());
                let c_t = goa_extinction_cross_section(&input)?.value;
                let c_a = if eta.im == 0.0 { 0.0 } else { goa_absorption_cross_section(&input)? };
                (c_t, (c_t - c_a).max(0.0), c_a)
            }
        };
        csv.write_record([r.to_string(), c_t.to_string(), c_s.to_string(), c_a.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn compare(a: &CompareArgs, header: &str) -> Result<()> {
    a.optics.validate()?;
    let radii = if a.radii.is_empty() {
        radius_grid(a.r_min, a.r_max, a.count, Spacing::Log)?
    } else {
        for &r in &a.radii {
            positive("radii", r)?;
        }
        a.radii.clone()
    };
    if !(a.exclusion >= 0.0) {
        return Err(usage("--exclusion must be non-negative"));
    }
    let settings = ComparisonSettings {
        wavelength_um: a.optics.wavelength,
        eta: a.optics.eta(),
        eta_medium: a.optics.eta_medium,
        step_deg: a.theta_step,
        exclusion_deg: a.exclusion,
        p_max: a.p_max,
    };
    theta_grid_deg(a.theta_step)?;
    for &r in &radii {
        MieInput::in_host(r, settings.wavelength_um, settings.eta, settings.eta_medium).validate()?;
        GoaInput::new(r, settings.wavelength_um, settings.eta, settings.eta_medium).with_p_max(a.p_max).validate()?;
    }
    let columns = ["radius_um", "rel_mse", "rel_mse_pointwise", "kept_angles", "t_mie_s", "t_goa_s", "ratio"];
    let mut csv = csv_out(a.out.as_deref(), header, &[], &columns)?;
    for r in radii {
        let c = compare_methods(r, &settings)?;
        csv.write_record([
            r.to_string(),
            c.rel_mse.to_string(),
            c.rel_mse_pointwise.to_string(),
            c.kept_angles.to_string(),
            c.mie_seconds.to_string(),
            c.goa_seconds.to_string(),
            c.timing_ratio().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn aabb(v: &[f64], flag: &str) -> Result<Aabb> {
    if v.len() != 6 {
        return Err(usage(format!("--{flag} takes 6 comma separated values, got {}", v.len())));
    }
    let b = Aabb::new(DVec3::new(v[0], v[1], v[2]), DVec3::new(v[3], v[4], v[5]));
    b.validate().map_err(|e| usage(format!("--{flag}: {e}")))?;
    Ok(b)
}

fn need(v: Option<f64>, flag: &str, psd: &str) -> Result<f64> {
    v.ok_or_else(|| usage(format!("--psd {psd} needs --{flag}")))
}

fn size_distribution(a: &GenArgs) -> Result<SizeDistribution> {
    let psd = match a.psd {
        PsdArg::Lognormal => SizeDistribution::log_normal(need(a.rg, "rg", "lognormal")?, need(a.sg, "sg", "lognormal")?, a.n),
        PsdArg::Bimodal => {
            let first = LogNormalMode { r_g_um: need(a.rg, "rg", "bimodal")?, sigma_g: need(a.sg, "sg", "bimodal")?, count: a.n };
            let count = a.n2.ok_or_else(|| usage("--psd bimodal needs --n2"))?;
            let second = LogNormalMode { r_g_um: need(a.rg2, "rg2", "bimodal")?, sigma_g: need(a.sg2, "sg2", "bimodal")?, count };
            SizeDistribution::bimodal(first, second)
        }
        PsdArg::Uniform => SizeDistribution::uniform(need(a.r_min, "r-min", "uniform")?, need(a.r_max, "r-max", "uniform")?, a.n),
        PsdArg::Mono => SizeDistribution::monodisperse(need(a.r, "r", "mono")?, a.n),
    };
    let psd = psd.with_clip(a.clip_min.unwrap_or(RADIUS_LIMITS_UM.0), a.clip_max.unwrap_or(RADIUS_LIMITS_UM.1));
    psd.validate()?;
    Ok(psd)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn gen(a: &GenArgs, header: &str) -> Result<()> {
    let psd = size_distribution(a)?;
    let bounds = aabb(&a.bounds, "bounds")?;
    let cloud = generate_cloud(&psd, &bounds, a.seed)?;
    if is_csv(&a.out) {
        let mut w = output(Some(&a.out))?;
        writeln!(w, "{header}")?;
        cloud.write_csv(&mut w)?;
        w.flush()?;
    } else {
        cloud.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    }
    eprintln!("{} particles written to {} ({} clipped draws)", cloud.len(), a.out.display(), cloud.rejections);
    Ok(())
}

fn psd(a: &PsdArgs, header: &str) -> Result<()> {
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let region = a.region.as_deref().map(|r| aabb(r, "region")).transpose()?;
    let cloud = ParticleCloud::load(&a.particles).with_context(|| format!("reading {}", a.particles.display()))?;
    let hist = estimate_local_psd(&cloud, &region.unwrap_or(cloud.bounds), a.bins)?;
    let mut csv = csv_out(a.out.as_deref(), header, &[], &["radius_lo_um", "radius_hi_um", "count"])?;
    for (k, c) in hist.counts.iter().enumerate() {
        csv.write_record([hist.edges[k].to_string(), hist.edges[k + 1].to_string(), c.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str, ext: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

fn save_render(out: &RenderOutput, prefix: &Path, suffix: &str) -> Result<()> {
    let (pfm, png) = (with_suffix(prefix, suffix, "pfm"), with_suffix(prefix, suffix, "png"));
    spectral_to_srgb(&out.image).save(&pfm, &png)?;
    let s = &out.stats;
    eprintln!(
        "wrote {} and {} ({:.2} s, capture radius {:?} m, grid {:?}, {} dropped samples)",
        pfm.display(),
        png.display(),
        s.seconds,
        s.capture_radius_m,
        s.grid_resolution,
        s.nan_samples
    );
    Ok(())
}

fn render_scene(a: &RenderArgs, header: &str) -> Result<()> {
    for &k in &a.k {
        positive("k", k)?;
    }
    let mut scene = Scene::load(&a.scene).with_context(|| format!("loading {}", a.scene.display()))?;
    let it = &mut scene.integrator;
    it.spp = a.spp.unwrap_or(it.spp);
    it.seed = a.seed.unwrap_or(it.seed);
    it.max_bounces = a.max_bounces.unwrap_or(it.max_bounces);
    it.validate()?;
    if let Some(dir) = &a.cache {
        scene.cache_dir = Some(dir.clone());
    }
    if let (Some(c), SceneMedium::Discrete { capture, .. }) = (a.capture, &mut scene.medium) {
        *capture = match c {
            CaptureArg::CaptureArea => CaptureNormalization::CaptureArea,
            CaptureArg::AxisArea => CaptureNormalization::AxisArea,
        };
    }
    let discrete = matches!(scene.medium, SceneMedium::Discrete { .. });
    if a.mode != RenderMode::Discrete && !discrete {
        return Err(usage(format!("--mode {:?} needs a scene with a discrete medium", a.mode).to_lowercase()));
    }
    let continuous = match a.mode {
        RenderMode::Discrete => None,
        _ => Some(render(&scene.with_continuous_medium()?)?),
    };
    if a.mode == RenderMode::Continuous {
        return save_render(continuous.as_ref().expect("continuous render"), &a.out, "");
    }
    let ks = if a.k.is_empty() { vec![scene.integrator.k_factor] } else { a.k.clone() };
    let series = ks.len() > 1;
    let mut rows = Vec::new();
    for k in ks {
        scene.integrator.k_factor = k;
        let out = render(&scene)?;
        let suffix = match (series, a.mode) {
            (false, RenderMode::Compare) => "_discrete".to_string(),
            (false, _) => String::new(),
            (true, RenderMode::Compare) => format!("_discrete_k{k}"),
            (true, _) => format!("_k{k}"),
        };
        save_render(&out, &a.out, &suffix)?;
        if let Some(reference) = &continuous {
            let l1 = mean_relative_l1(&out.image, &reference.image)?;
            eprintln!("k = {k}: mean relative L1 against the continuous medium {l1:.5}");
            rows.push((k, l1));
        }
    }
    if let Some(reference) = &continuous {
        save_render(reference, &a.out, "_continuous")?;
        let path = with_suffix(&a.out, "_l1", "csv");
        let mut csv = csv_out(Some(&path), header, &[], &["k_factor", "mean_relative_l1"])?;
        for (k, l1) in rows {
            csv.write_record([k.to_string(), l1.to_string()])?;
        }
        csv.flush()?;
    }
    Ok(())
}
