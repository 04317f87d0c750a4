//! Synthetic mmWave channels, noisy training copies, and ELM datasets.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::beamforming::{encode_complex, optimal_fd_beamformer, CMat, C64};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One channel realization `H ∈ C^{N_r × N_t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub matrix: CMat,
    pub realization_id: u64,
}

impl Channel {
    pub fn n_r(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.matrix.ncols()
    }

    /// Sample row `[Re(vec H), Im(vec H)]`.
    pub fn encode(&self) -> Vec<f64> {
        encode_complex(&self.matrix)
    }
}

/// Half-open angle interval `[start, start + width)` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRange {
    pub start: f64,
    pub width: f64,
}

impl AngleRange {
    pub const FULL: AngleRange = AngleRange {
        start: 0.0,
        width: 2.0 * PI,
    };

    fn draw(&self, rng: &mut Rng) -> f64 {
        self.start + self.width * rng.random::<f64>()
    }
}

/// Geometric multipath model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub n_t: usize,
    pub n_r: usize,
    pub paths: usize,
    pub departure: AngleRange,
    pub arrival: AngleRange,
}

impl ChannelParams {
    pub fn new(n_t: usize, n_r: usize, paths: usize) -> Self {
        ChannelParams {
            n_t,
            n_r,
            paths,
            departure: AngleRange::FULL,
            arrival: AngleRange::FULL,
        }
    }

    /// Channel statistics for region `l` (1-based) out of `n_regions`.
    ///
    /// Regions split the `[-π/2, π/2]` sector into equal slices and draw
    /// departure angles within `spread` radians of their slice centre.
    pub fn for_region(n_t: usize, n_r: usize, paths: usize, region: usize, n_regions: usize, spread: f64) -> Result<Self> {
        if region == 0 || region > n_regions {
            return Err(Error::arg(format!("region {region} outside 1..={n_regions}")));
        }
        let center = -PI / 2.0 + PI * (region as f64 - 0.5) / n_regions as f64;
        let range = AngleRange {
            start: center - spread / 2.0,
            width: spread,
        };
        Ok(ChannelParams {
            n_t,
            n_r,
            paths,
            departure: range,
            arrival: range,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 || self.paths == 0 {
            return Err(Error::arg(format!(
                "channel dimensions must be positive (n_t={}, n_r={}, paths={})",
                self.n_t, self.n_r, self.paths
            )));
        }
        Ok(())
    }
}

/// Uniform linear array response with half-wavelength spacing, unit norm.
pub fn steering_vector(n: usize, angle: f64) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| C64::from_polar(scale, PI * k as f64 * angle.sin()))
        .collect()
}

fn complex_normal(rng: &mut Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// `H = sqrt(N_t N_r / P) Σ_p α_p a_r(θ_p) a_t(φ_p)ᴴ` with `α_p ~ CN(0, 1)`.
pub fn generate_channel(params: &ChannelParams, realization_id: u64, rng: &mut Rng) -> Result<Channel> {
    params.validate()?;
    let ChannelParams { n_t, n_r, paths, .. } = *params;
    let gain = ((n_t * n_r) as f64 / paths as f64).sqrt();
    let mut h = CMat::zeros(n_r, n_t);
    for _ in 0..paths {
        let alpha = complex_normal(rng, 1.0);
        let theta = params.arrival.draw(rng);
        let phi = params.departure.draw(rng);
        let ar = steering_vector(n_r, theta);
        let at = steering_vector(n_t, phi);
        for (i, a) in ar.iter().enumerate() {
            for (j, b) in at.iter().enumerate() {
                h[(i, j)] += alpha * a * b.conj() * gain;
            }
        }
    }
    Ok(Channel {
        matrix: h,
        realization_id,
    })
}

/// Per-entry noise variance for a target SNR, calibrated on the mean entry
/// power of `h`. Infinite SNR means no noise.
pub fn noise_variance(h: &CMat, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    let power = h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len() as f64;
    power * 10f64.powf(-snr_db / 10.0)
}

/// `copies` noisy observations `H + N`, `N` i.i.d. `CN(0, σ²)`.
pub fn add_training_noise(h: &Channel, snr_db: f64, copies: usize, rng: &mut Rng) -> Vec<Channel> {
    let var = noise_variance(&h.matrix, snr_db);
    (0..copies)
        .map(|_| {
            let mut m = h.matrix.clone();
            if var > 0.0 {
                for v in m.iter_mut() {
                    *v += complex_normal(rng, var);
                }
            }
            Channel {
                matrix: m,
                realization_id: h.realization_id,
            }
        })
        .collect()
}

/// Everything that identifies a dataset file besides its rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub n_t: usize,
    pub n_r: usize,
    pub n_s: usize,
    pub realizations: usize,
    pub copies: usize,
    /// Region id `l`, 1-based.
    pub region: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn rows(&self) -> usize {
        self.realizations * self.copies
    }

    pub fn sample_width(&self) -> usize {
        2 * self.n_r * self.n_t
    }

    pub fn target_width(&self) -> usize {
        2 * self.n_t * self.n_s
    }
}

/// Local ELM training data: `D = R·C` rows of (noisy channel, clean target).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub header: DatasetHeader,
    pub samples: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

/// Held-out evaluation data. Row `d` of `samples`/`targets` belongs to
/// realization `d`; `clean[d]` is the true channel and `noisy[d]` its
/// observed copy.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub clean: Vec<Channel>,
    pub noisy: Vec<Channel>,
    pub samples: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub n_s: usize,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// Concatenate several test sets (e.g. one per region).
    pub fn concat(parts: Vec<TestSet>) -> Result<TestSet> {
        let first = parts.first().ok_or_else(|| Error::arg("no test sets to join"))?;
        let n_s = first.n_s;
        let (sw, tw) = (first.samples.ncols(), first.targets.ncols());
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        let mut srows = Vec::new();
        let mut trows = Vec::new();
        for p in parts {
            if p.n_s != n_s || p.samples.ncols() != sw || p.targets.ncols() != tw {
                return Err(Error::arg("test sets have mismatched shapes"));
            }
            for d in 0..p.len() {
                srows.push(p.samples.row(d).iter().copied().collect::<Vec<_>>());
                trows.push(p.targets.row(d).iter().copied().collect::<Vec<_>>());
            }
            clean.extend(p.clean);
            noisy.extend(p.noisy);
        }
        Ok(TestSet {
            samples: rows_to_matrix(&srows, sw),
            targets: rows_to_matrix(&trows, tw),
            clean,
            noisy,
            n_s,
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c])
}

/// Recipe for one agent's (or one region's) dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    pub channel: ChannelParams,
    pub n_s: usize,
    pub realizations: usize,
    pub copies: usize,
    pub region: usize,
}

/// Draw `R` clean realizations, label each with its SVD beamformer, and
/// emit `C` noisy sample rows per realization sharing that label.
pub fn build_training_set(spec: &DatasetSpec, snr_db: f64, seed: u64, rng: &mut Rng) -> Result<TrainingSet> {
    if spec.realizations == 0 || spec.copies == 0 {
        return Err(Error::arg("realization and copy counts must be positive"));
    }
    let header = DatasetHeader {
        n_t: spec.channel.n_t,
        n_r: spec.channel.n_r,
        n_s: spec.n_s,
        realizations: spec.realizations,
        copies: spec.copies,
        region: spec.region,
        snr_db,
        seed,
    };
    let mut samples = DMatrix::zeros(header.rows(), header.sample_width());
    let mut targets = DMatrix::zeros(header.rows(), header.target_width());
    let mut d = 0;
    for r in 0..spec.realizations {
        let h = generate_channel(&spec.channel, r as u64, rng)?;
        let target = encode_complex(&optimal_fd_beamformer(&h.matrix, spec.n_s)?);
        for noisy in add_training_noise(&h, snr_db, spec.copies, rng) {
            for (c, v) in noisy.encode().into_iter().enumerate() {
                samples[(d, c)] = v;
            }
            for (c, v) in target.iter().enumerate() {
                targets[(d, c)] = *v;
            }
            d += 1;
        }
    }
    Ok(TrainingSet {
        header,
        samples,
        targets,
    })
}

/// One noisy observation per fresh realization, labeled from the clean channel.
pub fn build_test_set(channel: &ChannelParams, n_s: usize, realizations: usize, snr_db: f64, rng: &mut Rng) -> Result<TestSet> {
    if realizations == 0 {
        return Err(Error::arg("test set needs at least one realization"));
    }
    let mut clean = Vec::with_capacity(realizations);
    let mut noisy = Vec::with_capacity(realizations);
    for r in 0..realizations {
        let h = generate_channel(channel, r as u64, rng)?;
        let obs = add_training_noise(&h, snr_db, 1, rng).pop().expect("one copy");
        clean.push(h);
        noisy.push(obs);
    }
    let sw = 2 * channel.n_r * channel.n_t;
    let tw = 2 * channel.n_t * n_s;
    let mut samples = DMatrix::zeros(realizations, sw);
    let mut targets = DMatrix::zeros(realizations, tw);
    for d in 0..realizations {
        for (c, v) in noisy[d].encode().into_iter().enumerate() {
            samples[(d, c)] = v;
        }
        let t = encode_complex(&optimal_fd_beamformer(&clean[d].matrix, n_s)?);
        for (c, v) in t.into_iter().enumerate() {
            targets[(d, c)] = v;
        }
    }
    Ok(TestSet {
        clean,
        noisy,
        samples,
        targets,
        n_s,
    })
}

const DATASET_MAGIC: &[u8; 8] = b"ISPWDAT1";

/// Little-endian binary: magic, header (six u64, f64 SNR, u64 seed), then the
/// row-major sample block and the row-major target block as f64.
pub fn write_dataset(path: &Path, set: &TrainingSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(w: &mut W, set: &TrainingSet) -> Result<()> {
    let h = &set.header;
    w.write_all(DATASET_MAGIC)?;
    for v in [h.n_t, h.n_r, h.n_s, h.realizations, h.copies, h.region] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&h.snr_db.to_le_bytes())?;
    w.write_all(&h.seed.to_le_bytes())?;
    for m in [&set.samples, &set.targets] {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&m[(r, c)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrainingSet> {
    read_dataset_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<TrainingSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = usize::try_from(next_u64(r)?).map_err(|_| Error::Format("dimension overflow".into()))?;
    }
    let snr_db = f64::from_bits(next_u64(r)?);
    let seed = next_u64(r)?;
    let header = DatasetHeader {
        n_t: dims[0],
        n_r: dims[1],
        n_s: dims[2],
        realizations: dims[3],
        copies: dims[4],
        region: dims[5],
        snr_db,
        seed,
    };
    let rows = header.rows();
    let mut read_block = |r: &mut R, cols: usize| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f64::from_bits(next_u64(r)?);
            }
        }
        Ok(m)
    };
    let samples = read_block(r, header.sample_width())?;
    let targets = read_block(r, header.target_width())?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after dataset blocks".into()));
    }
    Ok(TrainingSet {
        header,
        samples,
        targets,
    })
}
