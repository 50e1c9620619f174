//! Versioned binary encoding of fitted estimators.
//!
//! ```text
//! "FRTM" | version u32 | kind u8 (1 gmm, 2 kde, 3 ocsvm) | seed u64
//! standardizer: mean vec, std vec, epsilon f64
//! model section (see the encode_* functions)
//! ```
//! Integers are little-endian u64 unless noted; `vec` is a u64 length
//! followed by that many f64 values; matrices are rows u64, cols u64, vec.

use std::path::Path;

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;

use super::{
    BandwidthRule, DensityModel, FittedEstimator, GammaRule, GmmModel, GmmParams, KdeModel,
    OcsvmModel, OcsvmParams, Standardizer,
};

pub const MODEL_MAGIC: [u8; 4] = *b"FRTM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &FeatureMatrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        self.vec(m.as_slice());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(ForteError::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| ForteError::MalformedModel("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(ForteError::Truncated {
                expected: self.pos + n.saturating_mul(8),
                found: self.buf.len(),
            });
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<FeatureMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.vec()?;
        FeatureMatrix::new(rows, cols, data).map_err(|e| ForteError::MalformedModel(e.to_string()))
    }
}

fn encode_bandwidth(w: &mut Writer, rule: BandwidthRule) {
    match rule {
        BandwidthRule::Scott => {
            w.u8(0);
            w.f64(0.0);
        }
        BandwidthRule::Silverman => {
            w.u8(1);
            w.f64(0.0);
        }
        BandwidthRule::Fixed(h) => {
            w.u8(2);
            w.f64(h);
        }
    }
}

fn decode_bandwidth(r: &mut Reader) -> Result<BandwidthRule> {
    let tag = r.u8()?;
    let h = r.f64()?;
    match tag {
        0 => Ok(BandwidthRule::Scott),
        1 => Ok(BandwidthRule::Silverman),
        2 => Ok(BandwidthRule::Fixed(h)),
        t => Err(ForteError::MalformedModel(format!(
            "unknown bandwidth rule tag {t}"
        ))),
    }
}

pub fn encode_estimator(est: &FittedEstimator) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(&MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(match est.model {
        DensityModel::Gmm(_) => 1,
        DensityModel::Kde(_) => 2,
        DensityModel::Ocsvm(_) => 3,
    });
    w.u64(est.seed);
    w.vec(&est.standardizer.mean);
    w.vec(&est.standardizer.std);
    w.f64(est.standardizer.epsilon);
    match &est.model {
        DensityModel::Gmm(m) => {
            w.usize(m.params.n_components);
            w.f64(m.params.tol);
            w.usize(m.params.max_iter);
            w.f64(m.params.reg_floor);
            w.u64(m.seed);
            w.usize(m.n_features);
            w.vec(&m.weights);
            w.vec(&m.means);
            w.vec(&m.variances);
            w.usize(m.n_iter);
            w.u8(u8::from(m.converged));
            w.f64(m.log_likelihood);
        }
        DensityModel::Kde(m) => {
            encode_bandwidth(&mut w, m.rule);
            w.f64(m.bandwidth);
            w.matrix(&m.points);
        }
        DensityModel::Ocsvm(m) => {
            w.f64(m.params.nu);
            match m.params.gamma {
                GammaRule::Scale => {
                    w.u8(0);
                    w.f64(0.0);
                }
                GammaRule::Fixed(g) => {
                    w.u8(1);
                    w.f64(g);
                }
            }
            w.f64(m.params.tol);
            w.usize(m.params.max_iter);
            w.f64(m.gamma);
            w.f64(m.rho);
            w.matrix(&m.support_vectors);
            w.vec(&m.alphas);
            w.u8(u8::from(m.converged));
            w.usize(m.iterations);
            w.f64(m.kkt_violation);
            w.usize(m.n_train);
        }
    }
    w.0
}

pub fn decode_estimator(bytes: &[u8]) -> Result<FittedEstimator> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(ForteError::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(ForteError::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let kind = r.u8()?;
    let seed = r.u64()?;
    let standardizer = Standardizer {
        mean: r.vec()?,
        std: r.vec()?,
        epsilon: r.f64()?,
    };
    let model = match kind {
        1 => {
            let params = GmmParams {
                n_components: r.usize()?,
                tol: r.f64()?,
                max_iter: r.usize()?,
                reg_floor: r.f64()?,
            };
            DensityModel::Gmm(GmmModel {
                params,
                seed: r.u64()?,
                n_features: r.usize()?,
                weights: r.vec()?,
                means: r.vec()?,
                variances: r.vec()?,
                n_iter: r.usize()?,
                converged: r.u8()? != 0,
                log_likelihood: r.f64()?,
                history: Vec::new(),
            })
        }
        2 => DensityModel::Kde(KdeModel {
            rule: decode_bandwidth(&mut r)?,
            bandwidth: r.f64()?,
            points: r.matrix()?,
        }),
        3 => {
            let nu = r.f64()?;
            let gamma_rule = match (r.u8()?, r.f64()?) {
                (0, _) => GammaRule::Scale,
                (1, g) => GammaRule::Fixed(g),
                (t, _) => {
                    return Err(ForteError::MalformedModel(format!(
                        "unknown gamma rule tag {t}"
                    )))
                }
            };
            let params = OcsvmParams {
                nu,
                gamma: gamma_rule,
                tol: r.f64()?,
                max_iter: r.usize()?,
            };
            DensityModel::Ocsvm(OcsvmModel {
                params,
                gamma: r.f64()?,
                rho: r.f64()?,
                support_vectors: r.matrix()?,
                alphas: r.vec()?,
                converged: r.u8()? != 0,
                iterations: r.usize()?,
                kkt_violation: r.f64()?,
                n_train: r.usize()?,
            })
        }
        t => {
            return Err(ForteError::MalformedModel(format!(
                "unknown model kind {t}"
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(ForteError::MalformedModel(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(FittedEstimator {
        standardizer,
        model,
        seed,
    })
}

pub fn save_estimator(est: &FittedEstimator, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_estimator(est)).map_err(|e| ForteError::io(path, e))
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<FittedEstimator> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ForteError::io(path, e))?;
    decode_estimator(&bytes)
}
