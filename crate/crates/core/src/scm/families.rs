//! Exogenous draws, structural mechanisms and observation functions per family.

use std::collections::BTreeMap;

use super::raster::{add_gaussian, draw_sprite, Shape};
use super::{BiasMode, Family, UnitContext};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub(crate) type Values = BTreeMap<String, f64>;

fn put(map: &mut Values, name: &str, v: f64) {
    map.insert(name.to_string(), v);
}

fn bit(rng: &mut Rng, p: f64) -> f64 {
    if rng::bernoulli(rng, p) {
        1.0
    } else {
        0.0
    }
}

/// One draw of every exogenous variable of the family, in a fixed order.
pub(crate) fn draw_exogenous(family: Family, rng: &mut Rng) -> Values {
    let mut u = Values::new();
    match family {
        Family::Blob => {
            put(&mut u, "u_causal", rng::uniform(rng));
            put(&mut u, "u_bias", rng::normal(rng, 0.0, 0.1));
            put(&mut u, "eps_causal", rng::normal(rng, 0.0, 0.1));
            put(&mut u, "u_indep", rng::uniform(rng));
        }
        Family::Dsprites => {
            let half_pi = std::f64::consts::FRAC_PI_2;
            put(&mut u, "u_x", rng::uniform_range(rng, 0.0, half_pi));
            put(&mut u, "u_y", rng::normal(rng, 0.0, 0.15));
            put(&mut u, "u_sc", rng::uniform_range(rng, 0.5, 0.7));
            put(&mut u, "u_theta", rng::uniform_range(rng, 0.0, 360.0));
            put(&mut u, "u_shape", rng::index(rng, 3) as f64);
            put(&mut u, "eps_x", rng::normal(rng, 0.0, 0.01));
            put(&mut u, "eps_y1", rng::normal(rng, 0.0, 0.1));
            put(&mut u, "eps_y2", rng::normal(rng, 0.0, 0.2));
            put(&mut u, "u_x_indep", rng::uniform_range(rng, 0.0, half_pi));
        }
        Family::DspritesMultibias => {
            put(&mut u, "u_c", bit(rng, 0.5));
            put(&mut u, "u_fx", bit(rng, 0.05));
            put(&mut u, "u_fy", bit(rng, 0.05));
            put(&mut u, "u_px", rng::uniform(rng));
            put(&mut u, "u_py", rng::uniform(rng));
            put(&mut u, "u_sc", rng::uniform(rng));
            put(&mut u, "u_theta", rng::uniform_range(rng, 0.0, 360.0));
            put(&mut u, "u_shape", rng::index(rng, 3) as f64);
            put(&mut u, "u_bx_indep", bit(rng, 0.5));
            put(&mut u, "u_by_indep", bit(rng, 0.5));
        }
        Family::YalebLike => {
            put(&mut u, "u_pose", rng::index(rng, 3) as f64);
            put(&mut u, "u_az", rng::uniform_range(rng, -1.0, 1.0));
            put(&mut u, "u_el", rng::uniform_range(rng, -1.0, 1.0));
        }
        Family::FairfaceLike => {
            put(&mut u, "u_sex", bit(rng, 0.5));
            put(&mut u, "u_skin", bit(rng, 0.5));
        }
        Family::WaterbirdsDiscrete => {
            put(&mut u, "u_bird", bit(rng, 0.5));
            put(&mut u, "u_bg", rng::uniform(rng));
        }
    }
    // Seed of the per-unit observation noise; kept exogenous so counterfactual
    // observations reuse the same noise realisation.
    put(&mut u, "noise_seed", (rng::uniform(rng) * 4294967296.0).floor());
    u
}

/// Evaluates mechanisms in topological order, clamping intervened variables.
struct Solver<'a> {
    interventions: &'a Values,
    out: Values,
}

impl Solver<'_> {
    fn set(&mut self, name: &str, natural: f64) -> f64 {
        let v = self.interventions.get(name).copied().unwrap_or(natural);
        self.out.insert(name.to_string(), v);
        v
    }
}

fn exo(u: &Values, name: &str) -> Result<f64> {
    u.get(name).copied().ok_or_else(|| Error::Input(format!("missing exogenous value {name}")))
}

fn xor(a: f64, b: f64) -> f64 {
    if (a > 0.5) != (b > 0.5) {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn solve(ctx: &UnitContext, u: &Values, interventions: &Values) -> Result<Values> {
    for name in interventions.keys() {
        if !ctx.family.variables().contains(&name.as_str()) {
            return Err(Error::Input(format!("{name} is not an endogenous variable of {:?}", ctx.family)));
        }
    }
    let biased = ctx.bias_mode == BiasMode::Biased;
    let mut s = Solver { interventions, out: Values::new() };
    match ctx.family {
        Family::Blob => {
            let ci = s.set("ci", exo(u, "u_causal")?);
            let base = if biased { ci } else { exo(u, "u_indep")? };
            s.set("bi", base + exo(u, "u_bias")?);
        }
        Family::Dsprites => {
            let x = s.set("x", exo(u, "u_x")?.sin());
            let driver = if biased { x } else { exo(u, "u_x_indep")?.sin() };
            let y = s.set("y", driver * driver + exo(u, "u_y")?);
            s.set("x_pos", x + exo(u, "eps_x")?);
            s.set("y_pos", (y + exo(u, "eps_y1")?).exp() + exo(u, "eps_y2")?);
            s.set("scale", exo(u, "u_sc")?);
            s.set("orientation", exo(u, "u_theta")?);
            s.set("shape", exo(u, "u_shape")?);
        }
        Family::DspritesMultibias => {
            let c = exo(u, "u_c")?;
            let class = s.set("scale_class", c);
            s.set("scale", 0.45 + 0.2 * class + 0.15 * exo(u, "u_sc")?);
            let bx = if biased { xor(c, exo(u, "u_fx")?) } else { exo(u, "u_bx_indep")? };
            let by = if biased { xor(c, exo(u, "u_fy")?) } else { exo(u, "u_by_indep")? };
            s.set("x_pos", 0.15 + 0.35 * bx + 0.35 * exo(u, "u_px")?);
            s.set("y_pos", 0.15 + 0.35 * by + 0.35 * exo(u, "u_py")?);
            s.set("orientation", exo(u, "u_theta")?);
            s.set("shape", exo(u, "u_shape")?);
        }
        Family::YalebLike => {
            s.set("pose", exo(u, "u_pose")?);
            s.set("azimuth", exo(u, "u_az")?);
            s.set("elevation", exo(u, "u_el")?);
        }
        Family::FairfaceLike => {
            s.set("sex", exo(u, "u_sex")?);
            s.set("skin", exo(u, "u_skin")?);
        }
        Family::WaterbirdsDiscrete => {
            let bird = s.set("bird", exo(u, "u_bird")?);
            let p = if biased { 0.9 * bird + 0.1 * (1.0 - bird) } else { 0.5 };
            s.set("background", if exo(u, "u_bg")? < p { 1.0 } else { 0.0 });
        }
    }
    Ok(s.out)
}

fn endo(v: &Values, name: &str) -> f64 {
    v[name]
}

/// Observation function: image pixels or a noisy tabular embedding.
pub(crate) fn render(ctx: &UnitContext, v: &Values, u: &Values) -> Result<Vec<f64>> {
    let res = ctx.resolution;
    let mut noise = rng::stream(exo(u, "noise_seed")? as u64, rng::streams::EXOGENOUS);
    let sigma = ctx.feature_noise;
    let mut features = match ctx.family {
        Family::Blob => {
            let mut img = vec![0.0; res * res];
            let spread = 3.0 * res as f64 / 32.0;
            let (near, far) = (res as f64 / 4.0, 3.0 * res as f64 / 4.0);
            let causal = (endo(v, "ci") + exo(u, "eps_causal")?).exp();
            add_gaussian(&mut img, res, near, near, spread, causal);
            add_gaussian(&mut img, res, far, far, spread, endo(v, "bi").exp());
            img
        }
        Family::Dsprites => {
            let mut img = vec![0.0; res * res];
            let pad = res as f64 / 8.0;
            let span = res as f64 - 1.0 - 2.0 * pad;
            let fx = endo(v, "x_pos").clamp(0.0, 1.0);
            let fy = ((endo(v, "y_pos") - 0.5) / 3.5).clamp(0.0, 1.0);
            let half = endo(v, "scale") * res as f64 / 8.0;
            let shape = Shape::from_index(endo(v, "shape") as usize);
            draw_sprite(&mut img, res, shape, pad + fx * span, pad + (1.0 - fy) * span, half, endo(v, "orientation"));
            img
        }
        Family::DspritesMultibias => {
            let mut img = vec![0.0; res * res];
            let pad = res as f64 / 8.0;
            let span = res as f64 - 1.0 - 2.0 * pad;
            let fx = endo(v, "x_pos").clamp(0.0, 1.0);
            let fy = endo(v, "y_pos").clamp(0.0, 1.0);
            let shape = Shape::from_index(endo(v, "shape") as usize);
            // Equal-area outlines: the pixel mass depends on scale alone.
            let half = endo(v, "scale") * res as f64 / 6.0 * (Shape::Square.unit_area() / shape.unit_area()).sqrt();
            draw_sprite(&mut img, res, shape, pad + fx * span, pad + (1.0 - fy) * span, half, endo(v, "orientation"));
            img
        }
        Family::YalebLike => {
            let pose = endo(v, "pose") as usize;
            let mut f: Vec<f64> = (0..3).map(|k| if k == pose { 1.0 } else { 0.0 }).collect();
            f.push(endo(v, "azimuth"));
            f.push(endo(v, "elevation"));
            f
        }
        Family::FairfaceLike => vec![2.0 * endo(v, "sex") - 1.0, 2.0 * endo(v, "skin") - 1.0],
        Family::WaterbirdsDiscrete => vec![2.0 * endo(v, "bird") - 1.0, 2.0 * endo(v, "background") - 1.0],
    };
    if sigma > 0.0 {
        let n_target = ctx.family.target_feature_count();
        for (i, f) in features.iter_mut().enumerate() {
            // Bias channels are cleaner than target channels, which makes them the
            // easier shortcut for an unregularised predictor.
            let sd = if i < n_target { sigma } else { 0.25 * sigma };
            *f += rng::normal(&mut noise, 0.0, sd);
        }
    }
    Ok(features)
}
