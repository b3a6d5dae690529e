use std::io::{Read, Write};
use std::path::Path;

use super::{DspError, Result};

/// Number of feature planes per signal: L, R, M, S.
pub const PLANES: usize = 4;

const MAGIC: &[u8; 4] = b"RFGS";
const VERSION: u32 = 1;

/// Four `bands × frames` planes in the fixed order (L, R, M, S).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bands: usize,
    frames: usize,
    planes: Vec<f32>,
    band_centers: Vec<f64>,
    hop_seconds: f64,
    config_hash: Option<String>,
}

impl Spectrogram {
    pub fn new(
        bands: usize,
        frames: usize,
        planes: Vec<f32>,
        band_centers: Vec<f64>,
        hop_seconds: f64,
        config_hash: Option<String>,
    ) -> Self {
        assert_eq!(planes.len(), PLANES * bands * frames);
        assert_eq!(band_centers.len(), bands);
        Spectrogram {
            bands,
            frames,
            planes,
            band_centers,
            hop_seconds,
            config_hash,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.band_centers
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.planes
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        let n = self.bands * self.frames;
        &self.planes[p * n..(p + 1) * n]
    }

    pub fn value(&self, p: usize, band: usize, frame: usize) -> f32 {
        self.plane(p)[band * self.frames + frame]
    }

    /// Splits into non-overlapping segments of `len` frames. A shorter
    /// tail is padded with the floor value (0) and flagged.
    pub fn segments(&self, len: usize) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.frames {
            let take = len.min(self.frames - start);
            let mut data = vec![0f32; PLANES * self.bands * len];
            for p in 0..PLANES {
                let src = self.plane(p);
                for b in 0..self.bands {
                    let row = &src[b * self.frames + start..b * self.frames + start + take];
                    let off = (p * self.bands + b) * len;
                    data[off..off + take].copy_from_slice(row);
                }
            }
            out.push(Segment {
                planes: PLANES,
                bands: self.bands,
                frames: len,
                data,
                padded: take < len,
            });
            start += len;
        }
        out
    }

    /// Serializes as: magic "RFGS", u32 version, u32 bands, u32 frames,
    /// f64 hop seconds, `bands` f64 centre frequencies, then the four
    /// planes as f32, all little-endian and row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.bands as u32).to_le_bytes())?;
        w.write_all(&(self.frames as u32).to_le_bytes())?;
        w.write_all(&self.hop_seconds.to_le_bytes())?;
        for c in &self.band_centers {
            w.write_all(&c.to_le_bytes())?;
        }
        for v in &self.planes {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(DspError::BadBlob("bad spectrogram magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(DspError::BadBlob(format!("unsupported version {version}")));
        }
        let bands = read_u32(&mut r)? as usize;
        let frames = read_u32(&mut r)? as usize;
        let hop_seconds = read_f64(&mut r)?;
        let band_centers = (0..bands).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let n = PLANES * bands * frames;
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw)?;
        let planes = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Spectrogram {
            bands,
            frames,
            planes,
            band_centers,
            hop_seconds,
            config_hash: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DspError::BadBlob("truncated spectrogram".into()),
        _ => DspError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// L and R planes exchanged; M and S are invariant under the swap.
pub fn swap_lr(spec: &Spectrogram) -> Spectrogram {
    let n = spec.bands * spec.frames;
    let mut planes = spec.planes.clone();
    let (l, rest) = planes.split_at_mut(n);
    l.swap_with_slice(&mut rest[..n]);
    Spectrogram { planes, ..spec.clone() }
}

/// Fixed-length model input: `planes × bands × frames` values, where
/// `planes` is 4 for a single signal or 8 for a (reference, degraded) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub planes: usize,
    pub bands: usize,
    pub frames: usize,
    pub data: Vec<f32>,
    pub padded: bool,
}

impl Segment {
    pub fn new(planes: usize, bands: usize, frames: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), planes * bands * frames);
        Segment {
            planes,
            bands,
            frames,
            data,
            padded: false,
        }
    }

    pub fn cells(&self) -> usize {
        self.bands * self.frames
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        &self.data[p * self.cells()..(p + 1) * self.cells()]
    }

    pub fn same_shape(&self, other: &Segment) -> bool {
        self.planes == other.planes && self.bands == other.bands && self.frames == other.frames
    }

    /// Channel-stacks a reference and a degraded segment: planes
    /// (ref L, R, M, S, deg L, R, M, S).
    pub fn pair(reference: &Segment, degraded: &Segment) -> Segment {
        assert!(reference.same_shape(degraded));
        let mut data = reference.data.clone();
        data.extend_from_slice(&degraded.data);
        Segment {
            planes: reference.planes + degraded.planes,
            bands: reference.bands,
            frames: reference.frames,
            data,
            padded: reference.padded || degraded.padded,
        }
    }

    /// Swaps L and R within every 4-plane group.
    pub fn swap_lr(&self) -> Segment {
        let n = self.cells();
        let mut data = self.data.clone();
        for g in 0..self.planes / PLANES {
            let base = g * PLANES * n;
            let (l, r) = data[base..base + 2 * n].split_at_mut(n);
            l.swap_with_slice(r);
        }
        Segment { data, ..self.clone() }
    }
}
