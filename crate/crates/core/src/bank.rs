//! Server-side store of phase-free, low-frequency amplitude patches that
//! clients contribute for cross-domain augmentation.
//!
//! Snapshot layout (all integers and floats little-endian):
//!
//! ```text
//! "FDGB" | version: u16 | entry count: u32
//! per entry: client: u16 | C: u16 | H: u16 | W: u16 | beta: f64 | C*H*W f64 amplitudes
//! ```

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::augment::{make_low_freq_mask, FrequencyMask};
use crate::error::{Error, Result};
use crate::io_util::{read_array, read_f64, read_u16, read_u32};
use crate::scalar::Scalar;
use crate::spectral::{forward_dft, inverse_dft, recompose, Image, Planes, Shape};

pub type ClientId = u16;

pub const BANK_MAGIC: &[u8; 4] = b"FDGB";
pub const BANK_VERSION: u16 = 1;

/// Masked amplitude spectrum of one image. Entries never carry phase.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeBankEntry<T> {
    origin_client: ClientId,
    mask_beta: f64,
    masked_amplitude: Planes<T>,
}

impl<T: Scalar> AmplitudeBankEntry<T> {
    pub fn origin_client(&self) -> ClientId {
        self.origin_client
    }

    pub fn mask_beta(&self) -> f64 {
        self.mask_beta
    }

    pub fn shape(&self) -> Shape {
        self.masked_amplitude.shape()
    }

    pub fn masked_amplitude(&self) -> &Planes<T> {
        &self.masked_amplitude
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AmplitudeBank<T> {
    registered: BTreeSet<ClientId>,
    entries: Vec<AmplitudeBankEntry<T>>,
}

impl<T: Scalar> AmplitudeBank<T> {
    pub fn new() -> Self {
        AmplitudeBank {
            registered: BTreeSet::new(),
            entries: Vec::new(),
        }
    }

    pub fn register_client(&mut self, client: ClientId) {
        self.registered.insert(client);
    }

    pub fn is_registered(&self, client: ClientId) -> bool {
        self.registered.contains(&client)
    }

    pub fn entries(&self) -> &[AmplitudeBankEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds the amplitude of `img` restricted to `mask`.
    pub fn contribute(
        &mut self,
        client: ClientId,
        img: &Image<T>,
        mask: &FrequencyMask,
    ) -> Result<&AmplitudeBankEntry<T>> {
        if !self.is_registered(client) {
            return Err(Error::UnregisteredClient(client));
        }
        if img.height() != mask.height() || img.width() != mask.width() {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs image {}",
                mask.height(),
                mask.width(),
                img.shape()
            )));
        }
        let spectrum = forward_dft(img)?;
        let plane = img.shape().plane_len();
        let data = spectrum
            .amplitude()
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| if mask.bits()[i % plane] { a } else { T::zero() })
            .collect();
        self.entries.push(AmplitudeBankEntry {
            origin_client: client,
            mask_beta: mask.beta(),
            masked_amplitude: Planes::new(img.shape(), data)?,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Uniformly random entry contributed by any client other than `client`.
    pub fn draw_foreign<R: Rng + ?Sized>(
        &self,
        client: ClientId,
        rng: &mut R,
    ) -> Result<&AmplitudeBankEntry<T>> {
        let foreign: Vec<&AmplitudeBankEntry<T>> = self
            .entries
            .iter()
            .filter(|e| e.origin_client != client)
            .collect();
        if foreign.is_empty() {
            return Err(Error::NoForeignEntries(client));
        }
        Ok(foreign[rng.random_range(0..foreign.len())])
    }

    pub fn has_foreign_entries(&self, client: ClientId) -> bool {
        self.entries.iter().any(|e| e.origin_client != client)
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::invalid("bank", "too many entries for snapshot"))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(BANK_MAGIC);
        buf.extend_from_slice(&BANK_VERSION.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        for entry in &self.entries {
            let shape = entry.shape();
            buf.extend_from_slice(&entry.origin_client.to_le_bytes());
            for dim in [shape.channels, shape.height, shape.width] {
                let dim = u16::try_from(dim)
                    .map_err(|_| Error::invalid("bank", format!("dimension {dim} exceeds u16")))?;
                buf.extend_from_slice(&dim.to_le_bytes());
            }
            buf.extend_from_slice(&entry.mask_beta.to_le_bytes());
            for v in entry.masked_amplitude.data() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out.write_all(&buf)
            .map_err(|e| Error::io("<bank snapshot>", e))
    }

    /// Parses a snapshot. Registered clients are the origins of the entries.
    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        const FORMAT: &str = "bank snapshot";
        let magic: [u8; 4] = read_array(&mut input, FORMAT)?;
        if &magic != BANK_MAGIC {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let version = read_u16(&mut input, FORMAT)?;
        if version != BANK_VERSION {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = read_u32(&mut input, FORMAT)?;
        let mut bank = AmplitudeBank::new();
        for _ in 0..count {
            let client = read_u16(&mut input, FORMAT)?;
            let c = read_u16(&mut input, FORMAT)? as usize;
            let h = read_u16(&mut input, FORMAT)? as usize;
            let w = read_u16(&mut input, FORMAT)? as usize;
            let beta = read_f64(&mut input, FORMAT)?;
            let shape = Shape::new(c, h, w);
            let mut data = Vec::with_capacity(shape.len());
            for _ in 0..shape.len() {
                data.push(T::of(read_f64(&mut input, FORMAT)?));
            }
            let masked_amplitude = Planes::new(shape, data)?;
            let mask = make_low_freq_mask(h, w, beta)?;
            let plane = shape.plane_len();
            let leaks = masked_amplitude
                .data()
                .iter()
                .enumerate()
                .any(|(i, &v)| v < T::zero() || (!mask.bits()[i % plane] && v != T::zero()));
            if leaks {
                return Err(Error::Malformed {
                    format: FORMAT,
                    reason: "entry holds amplitude outside its mask band".into(),
                });
            }
            bank.register_client(client);
            bank.entries.push(AmplitudeBankEntry {
                origin_client: client,
                mask_beta: beta,
                masked_amplitude,
            });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(|e| Error::io("<bank snapshot>", e))? != 0 {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: "trailing bytes after last entry".into(),
            });
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_snapshot(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(std::io::BufReader::new(file))
    }
}

/// Pearson correlation between `original` and the image rebuilt from the
/// entry's amplitude with zero phase. A diagnostic for how little of the
/// original survives in the bank.
pub fn reconstruction_correlation<T: Scalar>(
    entry: &AmplitudeBankEntry<T>,
    original: &Image<T>,
) -> Result<f64> {
    let amp = entry.masked_amplitude();
    let phase = Planes::zeros(amp.shape())?;
    let rebuilt = inverse_dft(&recompose(amp, &phase)?)?;
    crate::spectral::ensure_same_shape(rebuilt.shape(), original.shape())?;
    let xs: Vec<f64> = rebuilt.data().iter().map(|v| v.as_f64()).collect();
    let ys: Vec<f64> = original.data().iter().map(|v| v.as_f64()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
