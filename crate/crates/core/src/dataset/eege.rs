use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use super::EpochRecord;
use crate::binio::{CrcReader, CrcWriter};
use crate::dsp::{band_lengths, Condition, InputMap, RawEpoch};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGE";
const VERSION: u16 = 1;
const FLAG_RAW: u16 = 1;
const NO_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    InputMap,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EegeHeader {
    pub kind: PayloadKind,
    pub n_epochs: u32,
    pub n_channels: u16,
    pub n_cols: u32,
    pub fs: f32,
}

/// One epoch as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEpoch {
    pub subject_id: u16,
    pub condition: Condition,
    pub label: Option<u8>,
    pub data: Vec<f32>,
}

impl FileEpoch {
    pub fn from_record(r: &EpochRecord) -> Self {
        FileEpoch { subject_id: r.subject_id, condition: r.condition, label: r.label, data: r.map.data.clone() }
    }

    pub fn from_raw(e: &RawEpoch) -> Self {
        FileEpoch {
            subject_id: e.subject_id,
            condition: e.condition,
            label: e.condition.label(),
            data: e.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_raw(self, header: &EegeHeader) -> Result<RawEpoch> {
        RawEpoch::new(
            self.subject_id,
            self.condition,
            header.fs as f64,
            header.n_channels as usize,
            self.data.into_iter().map(f64::from).collect(),
        )
    }

    /// Wavelet layout is recovered from the column count by assuming the
    /// default 8-tap, 4-level pyramid; otherwise a single band is recorded.
    pub fn into_record(self, header: &EegeHeader) -> Result<EpochRecord> {
        let cols = header.n_cols as usize;
        let map = InputMap::new(header.n_channels as usize, cols, self.data, infer_band_offsets(cols))?;
        Ok(EpochRecord { subject_id: self.subject_id, condition: self.condition, label: self.label, map })
    }
}

fn infer_band_offsets(cols: usize) -> Vec<usize> {
    (1..=2 * cols)
        .map(|n| band_lengths(n, 8, 4))
        .find(|b| b.iter().sum::<usize>() == cols)
        .map(|b| {
            let mut acc = vec![0];
            for l in b {
                acc.push(acc.last().unwrap() + l);
            }
            acc
        })
        .unwrap_or_else(|| vec![0, cols])
}

pub struct EegeWriter {
    path: PathBuf,
    header: EegeHeader,
    written: u32,
    out: CrcWriter<BufWriter<File>>,
}

impl EegeWriter {
    pub fn create(path: impl AsRef<Path>, header: EegeHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = CrcWriter::new(BufWriter::new(file));
        let flags = if header.kind == PayloadKind::Raw { FLAG_RAW } else { 0 };
        (|| {
            out.bytes(MAGIC)?;
            out.u16(VERSION)?;
            out.u16(flags)?;
            out.u32(header.n_epochs)?;
            out.u16(header.n_channels)?;
            out.u32(header.n_cols)?;
            out.f32(header.fs)
        })()
        .map_err(|e| Error::io(&path, e))?;
        Ok(EegeWriter { path, header, written: 0, out })
    }

    pub fn write(&mut self, e: &FileEpoch) -> Result<()> {
        let want = self.header.n_channels as usize * self.header.n_cols as usize;
        if e.data.len() != want {
            return Err(Error::shape("write_dataset", format!("epoch has {} values, header says {want}", e.data.len())));
        }
        if self.written == self.header.n_epochs {
            return Err(Error::Invalid(format!("header declares {} epochs", self.header.n_epochs)));
        }
        let out = &mut self.out;
        (|| {
            out.u16(e.subject_id)?;
            out.u8(e.condition.code())?;
            out.u8(e.label.unwrap_or(NO_LABEL))?;
            out.f32s(&e.data)
        })()
        .map_err(|err| Error::io(&self.path, err))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.written != self.header.n_epochs {
            return Err(Error::Invalid(format!("wrote {} of {} declared epochs", self.written, self.header.n_epochs)));
        }
        self.out.finish().map(drop).map_err(|e| Error::io(&self.path, e))
    }
}

pub struct EegeReader<R> {
    header: EegeHeader,
    remaining: u32,
    input: Option<CrcReader<R>>,
}

impl EegeReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> EegeReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut input = CrcReader::new(inner);
        let mut magic = [0u8; 4];
        input.bytes(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected EEGE")));
        }
        let version = input.u16()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let flags = input.u16()?;
        if flags & !FLAG_RAW != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#06x}")));
        }
        let header = EegeHeader {
            kind: if flags & FLAG_RAW != 0 { PayloadKind::Raw } else { PayloadKind::InputMap },
            n_epochs: input.u32()?,
            n_channels: input.u16()?,
            n_cols: input.u32()?,
            fs: input.f32()?,
        };
        if header.n_channels == 0 || header.n_cols == 0 || !(header.fs > 0.0) {
            return Err(Error::Format(format!("degenerate header {header:?}")));
        }
        Ok(EegeReader { header, remaining: header.n_epochs, input: Some(input) })
    }

    pub fn header(&self) -> &EegeHeader {
        &self.header
    }

    fn read_epoch(&mut self) -> Result<FileEpoch> {
        let n = self.header.n_channels as usize * self.header.n_cols as usize;
        let input = self.input.as_mut().expect("reader already finished");
        let subject_id = input.u16()?;
        let condition = Condition::from_code(input.u8()?)?;
        let label = match input.u8()? {
            NO_LABEL => None,
            l => Some(l),
        };
        if label.is_some() && label != condition.label() {
            return Err(Error::Format(format!("label {label:?} inconsistent with condition {condition}")));
        }
        let data = input.f32s(n)?;
        self.remaining -= 1;
        if self.remaining == 0 {
            self.input.take().unwrap().finish()?;
        }
        Ok(FileEpoch { subject_id, condition, label, data })
    }
}

impl<R: Read> Iterator for EegeReader<R> {
    type Item = Result<FileEpoch>;

    fn next(&mut self) -> Option<Result<FileEpoch>> {
        if self.remaining == 0 {
            // An empty file still carries a checksum to verify.
            return self.input.take().map(|i| i.finish()).and_then(Result::err).map(Err);
        }
        let r = self.read_epoch();
        if r.is_err() {
            self.remaining = 0;
            self.input = None;
        }
        Some(r)
    }
}

/// Writes a whole dataset. Every epoch must share the shape in `header`,
/// whose `n_epochs` is overwritten with `epochs.len()`.
pub fn write_dataset(path: impl AsRef<Path>, mut header: EegeHeader, epochs: &[FileEpoch]) -> Result<()> {
    header.n_epochs = epochs.len() as u32;
    let mut w = EegeWriter::create(path, header)?;
    for e in epochs {
        w.write(e)?;
    }
    w.finish()
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(EegeHeader, Vec<FileEpoch>)> {
    let reader = EegeReader::open(path)?;
    let header = *reader.header();
    let epochs = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, epochs))
}
