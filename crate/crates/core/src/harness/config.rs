//! Flat sectioned key-value configuration with a closed schema: unknown
//! sections or keys are hard errors so tolerance typos cannot pass
//! silently.

use crate::error::Error;
use crate::geometry::DeformationField;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Config {
    pub n_theta: usize,
    pub n_phi: usize,
    pub band_limit: usize,
    pub kappa_i: f64,
    pub kappa_e: f64,
    pub eps_i: f64,
    pub eps_e: f64,
    pub mu_i: f64,
    pub mu_e: f64,
    pub omega: f64,
    pub eta: f64,
    pub inc_dir: Vector3<f64>,
    pub inc_pol: Vector3<f64>,
    pub deformation_kind: String,
    pub def_center: Vector3<f64>,
    pub def_width: f64,
    pub def_amp: Vector3<f64>,
    pub def_c: Vector3<f64>,
    pub def_omega: Vector3<f64>,
    pub def_degree: usize,
    pub def_order: i64,
    pub def_amplitude: f64,
    pub scale: f64,
    pub fd_steps: Vec<f64>,
    pub ff_n_theta: usize,
    pub ff_n_phi: usize,
    pub seed: u64,
    /// run the verification suites at this band limit instead of the
    /// per-suite defaults
    pub verify_band_limit: Option<usize>,
    /// per-check tolerance overrides, keyed by check id
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_theta: 11,
            n_phi: 23,
            band_limit: 10,
            kappa_i: 1.5,
            kappa_e: 1.0,
            eps_i: 2.25,
            eps_e: 1.0,
            mu_i: 1.0,
            mu_e: 1.0,
            omega: 1.0,
            eta: 1.0,
            inc_dir: Vector3::new(0.0, 0.0, 1.0),
            inc_pol: Vector3::new(1.0, 0.0, 0.0),
            deformation_kind: "gaussian_bump".into(),
            def_center: Vector3::new(0.4, -0.2, 0.8),
            def_width: 0.7,
            def_amp: Vector3::new(0.3, 0.1, 0.8),
            def_c: Vector3::new(0.2, -0.1, 0.3),
            def_omega: Vector3::new(0.0, 0.0, 1.0),
            def_degree: 2,
            def_order: 1,
            def_amplitude: 0.8,
            scale: 0.0,
            fd_steps: vec![1e-2, 5e-3],
            ff_n_theta: 6,
            ff_n_phi: 12,
            seed: 42,
            verify_band_limit: None,
            tolerances: BTreeMap::new(),
        }
    }
}

fn parse_f64(line: usize, v: &str) -> Result<f64, Error> {
    v.trim().parse().map_err(|_| Error::Config {
        line,
        message: format!("expected a number, got `{v}`"),
    })
}

fn parse_usize(line: usize, v: &str) -> Result<usize, Error> {
    v.trim().parse().map_err(|_| Error::Config {
        line,
        message: format!("expected a count, got `{v}`"),
    })
}

fn parse_vec3(line: usize, v: &str) -> Result<Vector3<f64>, Error> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config {
            line,
            message: format!("expected three comma-separated numbers, got `{v}`"),
        });
    }
    Ok(Vector3::new(
        parse_f64(line, parts[0])?,
        parse_f64(line, parts[1])?,
        parse_f64(line, parts[2])?,
    ))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('[') {
                if !trimmed.ends_with(']') {
                    return Err(Error::Config {
                        line,
                        message: "unterminated section header".into(),
                    });
                }
                section = trimmed[1..trimmed.len() - 1].trim().to_string();
                match section.as_str() {
                    "grid" | "scattering" | "incident" | "deformation" | "fd" | "output"
                    | "verify" | "tolerances" => {}
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown section `{other}`"),
                        })
                    }
                }
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected key = value, got `{trimmed}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            match (section.as_str(), key) {
                ("grid", "n_theta") => cfg.n_theta = parse_usize(line, value)?,
                ("grid", "n_phi") => cfg.n_phi = parse_usize(line, value)?,
                ("grid", "band_limit") => cfg.band_limit = parse_usize(line, value)?,
                ("scattering", "kappa_i") => cfg.kappa_i = parse_f64(line, value)?,
                ("scattering", "kappa_e") => cfg.kappa_e = parse_f64(line, value)?,
                ("scattering", "eps_i") => cfg.eps_i = parse_f64(line, value)?,
                ("scattering", "eps_e") => cfg.eps_e = parse_f64(line, value)?,
                ("scattering", "mu_i") => cfg.mu_i = parse_f64(line, value)?,
                ("scattering", "mu_e") => cfg.mu_e = parse_f64(line, value)?,
                ("scattering", "omega") => cfg.omega = parse_f64(line, value)?,
                ("scattering", "eta") => cfg.eta = parse_f64(line, value)?,
                ("incident", "inc_dir") => cfg.inc_dir = parse_vec3(line, value)?,
                ("incident", "inc_pol") => cfg.inc_pol = parse_vec3(line, value)?,
                ("deformation", "kind") => cfg.deformation_kind = value.to_string(),
                ("deformation", "center") => cfg.def_center = parse_vec3(line, value)?,
                ("deformation", "width") => cfg.def_width = parse_f64(line, value)?,
                ("deformation", "amp") => cfg.def_amp = parse_vec3(line, value)?,
                ("deformation", "c") => cfg.def_c = parse_vec3(line, value)?,
                ("deformation", "omega") => cfg.def_omega = parse_vec3(line, value)?,
                ("deformation", "degree") => cfg.def_degree = parse_usize(line, value)?,
                ("deformation", "order") => {
                    cfg.def_order = value.parse().map_err(|_| Error::Config {
                        line,
                        message: format!("expected an integer order, got `{value}`"),
                    })?
                }
                ("deformation", "amplitude") => cfg.def_amplitude = parse_f64(line, value)?,
                ("deformation", "scale") => cfg.scale = parse_f64(line, value)?,
                ("fd", "steps") => {
                    cfg.fd_steps = value
                        .split(',')
                        .map(|s| parse_f64(line, s))
                        .collect::<Result<_, _>>()?;
                    if cfg.fd_steps.is_empty() {
                        return Err(Error::Config {
                            line,
                            message: "need at least one step".into(),
                        });
                    }
                }
                ("output", "ff_n_theta") => cfg.ff_n_theta = parse_usize(line, value)?,
                ("output", "ff_n_phi") => cfg.ff_n_phi = parse_usize(line, value)?,
                ("verify", "seed") => {
                    cfg.seed = value.parse().map_err(|_| Error::Config {
                        line,
                        message: format!("expected a seed, got `{value}`"),
                    })?
                }
                ("verify", "band_limit") => {
                    cfg.verify_band_limit = Some(parse_usize(line, value)?)
                }
                ("tolerances", id) => {
                    cfg.tolerances
                        .insert(id.to_string(), parse_f64(line, value)?);
                }
                (sec, k) => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{k}` in section `[{sec}]`"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    /// Build the configured deformation preset.
    pub fn deformation(&self) -> Result<DeformationField, Error> {
        self.deformation_named(&self.deformation_kind)
    }

    pub fn deformation_named(&self, kind: &str) -> Result<DeformationField, Error> {
        Ok(match kind {
            "constant" => DeformationField::Constant { c: self.def_c },
            "dilation" => DeformationField::Dilation,
            "rotation" => DeformationField::Rotation {
                omega: self.def_omega,
            },
            "gaussian_bump" => DeformationField::GaussianBump {
                center: self.def_center,
                width: self.def_width,
                amp: self.def_amp,
            },
            "harmonic_normal" => DeformationField::HarmonicNormal {
                degree: self.def_degree,
                order: self.def_order,
                amp: self.def_amplitude,
            },
            other => {
                return Err(Error::Usage(format!(
                    "unknown deformation preset `{other}`"
                )))
            }
        })
    }

    pub fn scattering_config(&self) -> Result<crate::emfield::ScatteringConfig, Error> {
        crate::emfield::ScatteringConfig::new(
            num_complex::Complex64::new(self.kappa_i, 0.0),
            num_complex::Complex64::new(self.kappa_e, 0.0),
            self.eps_i,
            self.eps_e,
            self.mu_i,
            self.mu_e,
            self.omega,
            self.eta,
        )
    }

    pub fn incident(&self) -> Result<crate::scattering::IncidentField, Error> {
        crate::scattering::IncidentField::new(self.inc_dir, self.inc_pol)
    }

    pub fn tolerance(&self, check_id: &str, default: f64) -> f64 {
        self.tolerances.get(check_id).copied().unwrap_or(default)
    }
}
