//! `SPLD` photon files: a 22-byte header, then per pixel in row-major order
//! a `u32` count followed by that many `u32` time-stamps, all little-endian.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::sketch::SketchAccumulator;
use crate::types::{FrequencyGrid, PhotonStream, Sketch};

use super::ByteReader;

pub const PHOTON_MAGIC: &[u8; 4] = b"SPLD";
pub const PHOTON_VERSION: u16 = 1;
pub const PHOTON_HEADER_BYTES: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonHeader {
    pub width: u32,
    pub height: u32,
    /// Histogram length `T`.
    pub bins: u32,
    pub bin_width_ps: u32,
}

impl PhotonHeader {
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::at_byte(14, format!("T={} must be at least 2", self.bins)));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(PHOTON_MAGIC)?;
        out.write_all(&PHOTON_VERSION.to_le_bytes())?;
        for v in [self.width, self.height, self.bins, self.bin_width_ps] {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn read<R: Read>(r: &mut ByteReader<R>) -> Result<Self> {
        let magic = r.array::<4>("magic")?;
        if &magic != PHOTON_MAGIC {
            return Err(Error::at_byte(0, format!("bad magic {magic:?}, expected \"SPLD\"")));
        }
        let version = r.u16("version")?;
        if version != PHOTON_VERSION {
            return Err(Error::at_byte(4, format!("unsupported version {version}")));
        }
        let header = Self {
            width: r.u32("width")?,
            height: r.u32("height")?,
            bins: r.u32("T")?,
            bin_width_ps: r.u32("bin width")?,
        };
        header.validate()?;
        Ok(header)
    }
}

/// A whole photon file held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonFile {
    pub header: PhotonHeader,
    /// Row-major per-pixel time-stamps.
    pub pixels: Vec<Vec<u32>>,
}

impl PhotonFile {
    pub fn new(header: PhotonHeader, pixels: Vec<Vec<u32>>) -> Result<Self> {
        header.validate()?;
        if pixels.len() != header.pixels() {
            return Err(Error::Dimension(format!(
                "{}x{} file needs {} pixels, got {}",
                header.width,
                header.height,
                header.pixels(),
                pixels.len()
            )));
        }
        if let Some((i, t)) = pixels
            .iter()
            .enumerate()
            .find_map(|(i, p)| p.iter().find(|&&t| t >= header.bins).map(|t| (i, *t)))
        {
            return Err(Error::Data(format!(
                "pixel {i}: time-stamp {t} is not below T={}",
                header.bins
            )));
        }
        Ok(Self { header, pixels })
    }

    pub fn from_streams(width: u32, height: u32, bin_width_ps: u32, streams: &[PhotonStream]) -> Result<Self> {
        let bins = streams.first().map_or(2, PhotonStream::bins);
        if streams.iter().any(|s| s.bins() != bins) {
            return Err(Error::Dimension("pixels disagree on T".into()));
        }
        let header = PhotonHeader {
            width,
            height,
            bins,
            bin_width_ps,
        };
        Self::new(header, streams.iter().map(|s| s.timestamps().to_vec()).collect())
    }

    pub fn streams(&self) -> Result<Vec<PhotonStream>> {
        let bin_width = f64::from(self.header.bin_width_ps) * 1e-12;
        self.pixels
            .iter()
            .map(|p| PhotonStream::new(p.clone(), self.header.bins, bin_width))
            .collect()
    }

    pub fn byte_len(&self) -> u64 {
        PHOTON_HEADER_BYTES + self.pixels.iter().map(|p| 4 + 4 * p.len() as u64).sum::<u64>()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        self.header.write(&mut out)?;
        for p in &self.pixels {
            out.write_all(&(p.len() as u32).to_le_bytes())?;
            for t in p {
                out.write_all(&t.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut reader = PhotonReader::new(input)?;
        let mut pixels = Vec::with_capacity(reader.header().pixels());
        let mut buf = vec![];
        while reader.next_pixel(|t| buf.push(t))?.is_some() {
            pixels.push(std::mem::take(&mut buf));
        }
        Ok(Self {
            header: *reader.header(),
            pixels,
        })
    }
}

/// Pixel-at-a-time reader that never holds more than one chunk of
/// time-stamps.
pub struct PhotonReader<R: Read> {
    bytes: ByteReader<R>,
    header: PhotonHeader,
    next: usize,
}

impl<R: Read> PhotonReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut bytes = ByteReader::new(input);
        let header = PhotonHeader::read(&mut bytes)?;
        Ok(Self { bytes, header, next: 0 })
    }

    pub fn header(&self) -> &PhotonHeader {
        &self.header
    }

    /// Feeds the next pixel's time-stamps to `visit` and returns its photon
    /// count, or `None` after the last pixel. Every time-stamp is range
    /// checked; errors carry the byte offset.
    pub fn next_pixel(&mut self, mut visit: impl FnMut(u32)) -> Result<Option<u32>> {
        if self.next == self.header.pixels() {
            self.bytes.expect_eof()?;
            return Ok(None);
        }
        let count = self.bytes.u32("photon count")?;
        let mut chunk = [0u8; 4096];
        let mut left = count as usize * 4;
        while left > 0 {
            let take = left.min(chunk.len());
            let start = self.bytes.offset();
            self.bytes.fill(&mut chunk[..take], "time-stamps")?;
            for (k, word) in chunk[..take].chunks_exact(4).enumerate() {
                let t = u32::from_le_bytes(word.try_into().expect("4-byte chunk"));
                if t >= self.header.bins {
                    return Err(Error::at_byte(
                        start + 4 * k as u64,
                        format!(
                            "time-stamp {t} in pixel {} is not below T={}",
                            self.next, self.header.bins
                        ),
                    ));
                }
                visit(t);
            }
            left -= take;
        }
        self.next += 1;
        Ok(Some(count))
    }
}

/// One-pass sketching of a photon file: each time-stamp goes straight into
/// the pixel's accumulator and is dropped.
pub fn sketch_photon_file<R: Read>(input: R, m: usize) -> Result<super::SketchFile> {
    let mut reader = PhotonReader::new(input)?;
    let header = *reader.header();
    let grid = FrequencyGrid::new(m, header.bins)?;
    let mut sketches: Vec<Sketch> = Vec::with_capacity(header.pixels());
    let mut acc = SketchAccumulator::new(&grid);
    while reader.next_pixel(|t| acc.push_unchecked(t))?.is_some() {
        sketches.push(acc.finalize());
        acc = SketchAccumulator::new(&grid);
    }
    super::SketchFile::new(header.width, header.height, header.bins, m, sketches)
}

/// Writes `pixel_x,pixel_y,timestamp` rows in file order.
pub fn dump_csv<W: Write>(file: &PhotonFile, out: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "pixel_x,pixel_y,timestamp")?;
    let w = file.header.width as usize;
    for (i, p) in file.pixels.iter().enumerate() {
        for t in p {
            writeln!(out, "{},{},{}", i % w, i / w, t)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Outcome of a CSV ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub rows: u64,
    /// `(line, reason)` for each row dropped under `skip_invalid`.
    pub skipped: Vec<(u64, String)>,
}

/// Builds a photon file from `pixel_x,pixel_y,timestamp` rows. An optional
/// header line is recognized by a non-numeric first field. Any invalid row
/// aborts with its line number unless `skip_invalid` is set.
pub fn ingest_csv<R: BufRead>(
    input: R,
    width: u32,
    height: u32,
    bins: u32,
    bin_width_ps: u32,
    skip_invalid: bool,
) -> Result<(PhotonFile, IngestReport)> {
    let header = PhotonHeader {
        width,
        height,
        bins,
        bin_width_ps,
    };
    header.validate()?;
    let mut pixels = vec![vec![]; header.pixels()];
    let mut report = IngestReport {
        rows: 0,
        skipped: vec![],
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let line = match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => record.position().map_or(0, |p| p.line()),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if skip_invalid {
                    report.skipped.push((line, e.to_string()));
                    continue;
                }
                return Err(Error::at_line(line, e.to_string()));
            }
        };
        if first {
            first = false;
            if record
                .get(0)
                .is_some_and(|f| f.parse::<u64>().is_err() && f.starts_with(|c: char| c.is_alphabetic()))
            {
                continue;
            }
        }
        match parse_row(&record, &header) {
            Ok((i, t)) => {
                pixels[i].push(t);
                report.rows += 1;
            }
            Err(msg) if skip_invalid => report.skipped.push((line, msg)),
            Err(msg) => return Err(Error::at_line(line, msg)),
        }
    }
    Ok((PhotonFile::new(header, pixels)?, report))
}

fn parse_row(record: &csv::StringRecord, header: &PhotonHeader) -> std::result::Result<(usize, u32), String> {
    if record.len() != 3 {
        return Err(format!(
            "expected 3 fields (pixel_x, pixel_y, timestamp), got {}",
            record.len()
        ));
    }
    let field = |k: usize, name: &str| {
        record[k]
            .parse::<u32>()
            .map_err(|e| format!("{name} {:?}: {e}", &record[k]))
    };
    let (x, y, t) = (field(0, "pixel_x")?, field(1, "pixel_y")?, field(2, "timestamp")?);
    if x >= header.width || y >= header.height {
        return Err(format!("pixel ({x}, {y}) outside {}x{}", header.width, header.height));
    }
    if t >= header.bins {
        return Err(format!("timestamp {t} is not below T={}", header.bins));
    }
    Ok((y as usize * header.width as usize + x as usize, t))
}
