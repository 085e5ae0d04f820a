use std::fmt::Write as _;
use std::path::Path;

use crate::codec;
use crate::error::{Error, Result};

/// Time × channel matrix of stimulation current levels (0 = no pulse).
///
/// Columns follow the allocation's channel order (lowest frequency first);
/// `electrodes()[c]` gives the electrode number driven by channel `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Electrodogram {
    levels: Vec<u8>,
    electrodes: Vec<u8>,
    pub hop_seconds: f64,
    /// Fingerprint of the encoder configuration that produced this.
    pub fingerprint: u64,
}

impl Electrodogram {
    pub fn new(levels: Vec<u8>, electrodes: Vec<u8>, hop_seconds: f64, fingerprint: u64) -> Self {
        assert!(!electrodes.is_empty() && levels.len().is_multiple_of(electrodes.len()), "ragged electrodogram");
        Self { levels, electrodes, hop_seconds, fingerprint }
    }

    pub fn num_channels(&self) -> usize {
        self.electrodes.len()
    }

    pub fn num_frames(&self) -> usize {
        self.levels.len() / self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn electrodes(&self) -> &[u8] {
        &self.electrodes
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let m = self.num_channels();
        &self.levels[i * m..(i + 1) * m]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.levels.chunks_exact(self.num_channels())
    }

    /// Keeps every `step`-th frame, starting with the first.
    pub fn decimate(&self, step: usize) -> Self {
        assert!(step > 0, "decimation step must be positive");
        let levels = self.frames().step_by(step).flatten().copied().collect();
        Self { levels, electrodes: self.electrodes.clone(), hop_seconds: self.hop_seconds * step as f64, fingerprint: self.fingerprint }
    }

    /// One row per frame; the header names each column's electrode.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame");
        for e in &self.electrodes {
            let _ = write!(s, ",e{e}");
        }
        s.push('\n');
        for (i, f) in self.frames().enumerate() {
            let _ = write!(s, "{i}");
            for v in f {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, hop_seconds: f64) -> Result<Self> {
        let bad = |m: String| Error::format("electrodogram csv", m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let electrodes = header
            .split(',')
            .skip(1)
            .map(|h| h.trim().trim_start_matches('e').parse::<u8>().map_err(|_| bad(format!("bad column `{h}`"))))
            .collect::<Result<Vec<_>>>()?;
        if electrodes.is_empty() {
            return Err(bad("no electrode columns".into()));
        }
        let mut levels = Vec::new();
        for (ln, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').skip(1).collect();
            if cols.len() != electrodes.len() {
                return Err(bad(format!("row {} has {} levels", ln + 1, cols.len())));
            }
            for c in cols {
                levels.push(c.trim().parse::<u8>().map_err(|_| bad(format!("bad level `{c}`")))?);
            }
        }
        Ok(Self::new(levels, electrodes, hop_seconds, 0))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_text(path.as_ref(), &self.to_csv())
    }

    /// Binary portable graymap: one row per electrode with electrode 1 at
    /// the top and the most apical electrode at the bottom, one column per
    /// frame, pixel value = current level.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.num_frames(), self.num_channels());
        let mut rows: Vec<usize> = (0..h).collect();
        rows.sort_by_key(|&c| self.electrodes[c]);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h);
        for &c in &rows {
            out.extend(self.frames().map(|f| f[c]));
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}
