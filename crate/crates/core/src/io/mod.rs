//! File formats: photon and sketch containers, CSV ingest, map and IRF
//! files. All binary integers and floats are little-endian.

mod photon_file;

pub use photon_file::{
    dump_csv, ingest_csv, sketch_photon_file, IngestReport, PhotonFile, PhotonHeader, PhotonReader,
    PHOTON_HEADER_BYTES, PHOTON_MAGIC, PHOTON_VERSION,
};

use std::io::{BufRead, Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spatial::DetectionMap;
use crate::types::{Irf, Sketch};

/// Reader that tracks its byte offset for error messages.
pub(crate) struct ByteReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::at_byte(
                        self.offset + read as u64,
                        format!("unexpected end of file reading {what}"),
                    ))
                }
                Ok(k) => read += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::at_byte(self.offset, "trailing bytes after the last pixel")),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub const SKETCH_MAGIC: &[u8; 4] = b"SKCH";
pub const SKETCH_VERSION: u16 = 1;
pub const SKETCH_HEADER_BYTES: u64 = 20;

/// Row-major per-pixel sketches: header, then per pixel `n: u32` and `m`
/// pairs of `f64` (real, imaginary).
#[derive(Debug, Clone, PartialEq)]
pub struct SketchFile {
    pub width: u32,
    pub height: u32,
    /// Histogram length `T` of the source data.
    pub bins: u32,
    pub m: usize,
    pub sketches: Vec<Sketch>,
}

impl SketchFile {
    pub fn new(width: u32, height: u32, bins: u32, m: usize, sketches: Vec<Sketch>) -> Result<Self> {
        if sketches.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "{width}x{height} file needs {} sketches, got {}",
                width as usize * height as usize,
                sketches.len()
            )));
        }
        if m == 0 || m > usize::from(u16::MAX) {
            return Err(Error::Parameter(format!("sketch size {m} outside [1, 65535]")));
        }
        if let Some(i) = sketches.iter().position(|s| s.len() != m) {
            return Err(Error::Dimension(format!(
                "pixel {i} sketch has {} entries, expected {m}",
                sketches[i].len()
            )));
        }
        if let Some(i) = sketches.iter().position(|s| s.n > u64::from(u32::MAX)) {
            return Err(Error::Parameter(format!("pixel {i} photon count does not fit in u32")));
        }
        Ok(Self {
            width,
            height,
            bins,
            m,
            sketches,
        })
    }

    pub fn byte_len(&self) -> u64 {
        SKETCH_HEADER_BYTES + self.sketches.len() as u64 * (4 + 16 * self.m as u64)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        out.write_all(SKETCH_MAGIC)?;
        out.write_all(&SKETCH_VERSION.to_le_bytes())?;
        out.write_all(&self.width.to_le_bytes())?;
        out.write_all(&self.height.to_le_bytes())?;
        out.write_all(&(self.m as u16).to_le_bytes())?;
        out.write_all(&self.bins.to_le_bytes())?;
        for s in &self.sketches {
            out.write_all(&(s.n as u32).to_le_bytes())?;
            for z in &s.z {
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = ByteReader::new(std::io::BufReader::new(input));
        let magic = r.array::<4>("magic")?;
        if &magic != SKETCH_MAGIC {
            return Err(Error::at_byte(0, format!("bad magic {magic:?}, expected \"SKCH\"")));
        }
        let version = r.u16("version")?;
        if version != SKETCH_VERSION {
            return Err(Error::at_byte(4, format!("unsupported version {version}")));
        }
        let width = r.u32("width")?;
        let height = r.u32("height")?;
        let m = usize::from(r.u16("m")?);
        let bins = r.u32("T")?;
        if m == 0 || bins < 2 || m >= bins as usize {
            return Err(Error::at_byte(14, format!("invalid sketch size m={m} for T={bins}")));
        }
        let pixels = width as usize * height as usize;
        let mut sketches = Vec::with_capacity(pixels);
        for i in 0..pixels {
            let start = r.offset();
            let n = u64::from(r.u32("photon count")?);
            let mut z = Vec::with_capacity(m);
            for _ in 0..m {
                let re = r.f64("sketch value")?;
                let im = r.f64("sketch value")?;
                z.push(Complex64::new(re, im));
            }
            let sketch = Sketch::new(z, n).map_err(|e| Error::at_byte(start, format!("pixel {i}: {e}")))?;
            sketches.push(sketch);
        }
        r.expect_eof()?;
        Self::new(width, height, bins, m, sketches)
    }
}

/// Binary PGM (P5), 255 for detected pixels and 0 elsewhere.
pub fn write_pgm<W: Write>(map: &DetectionMap, mut out: W) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", map.width, map.height)?;
    let bytes: Vec<u8> = map.values.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads a P5 map written by [`write_pgm`].
pub fn read_pgm<R: Read>(mut input: R) -> Result<DetectionMap> {
    let mut data = vec![];
    input.read_to_end(&mut data)?;
    let mut fields = vec![];
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::at_byte(pos as u64, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::at_byte(0, "expected an 8-bit P5 image"));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::at_byte(3, format!("bad dimension {s:?}: {e}")))
    };
    let (width, height) = (dim(&fields[1])?, dim(&fields[2])?);
    let body = data.get(pos..).unwrap_or(&[]);
    if body.len() != width * height {
        return Err(Error::at_byte(
            pos as u64,
            format!("expected {} pixel bytes, found {}", width * height, body.len()),
        ));
    }
    Ok(DetectionMap {
        width,
        height,
        values: body.iter().map(|&b| u8::from(b != 0)).collect(),
    })
}

/// `pixel_x,pixel_y,detected` rows.
pub fn write_map_csv<W: Write>(map: &DetectionMap, mut out: W) -> Result<()> {
    writeln!(out, "pixel_x,pixel_y,detected")?;
    for (i, v) in map.values.iter().enumerate() {
        writeln!(out, "{},{},{}", i % map.width, i / map.width, v)?;
    }
    Ok(())
}

/// Impulse response from text: nonnegative numbers separated by
/// whitespace or commas, `#` starting a comment.
pub fn read_irf_text<R: BufRead>(input: R) -> Result<Irf> {
    let mut h = vec![];
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        for tok in body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::at_line(k as u64 + 1, format!("bad IRF value {tok:?}: {e}")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::at_line(
                    k as u64 + 1,
                    format!("IRF value {v} must be finite and nonnegative"),
                ));
            }
            h.push(v);
        }
    }
    Irf::new(h)
}

pub fn write_irf_text<W: Write>(irf: &Irf, mut out: W) -> Result<()> {
    for v in irf.values() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FrequencyGrid;

    fn small_file() -> PhotonFile {
        PhotonFile::new(
            PhotonHeader {
                width: 3,
                height: 2,
                bins: 100,
                bin_width_ps: 250,
            },
            vec![vec![5], vec![], vec![0, 99, 42], vec![7, 7], vec![], vec![1]],
        )
        .unwrap()
    }

    #[test]
    fn photon_file_round_trip() {
        let f = small_file();
        let mut buf = vec![];
        f.write(&mut buf).unwrap();
        assert_eq!(buf.len() as u64, f.byte_len());
        assert_eq!(&buf[..4], b"SPLD");
        assert_eq!(PhotonFile::read(&buf[..]).unwrap(), f);
    }

    #[test]
    fn photon_file_errors_name_offsets() {
        let f = small_file();
        let mut buf = vec![];
        f.write(&mut buf).unwrap();
        // Pixel 2 starts after header(22) + 4+4 + 4 = 34; its second
        // time-stamp sits at 34 + 4 + 4 = 42.
        buf[42..46].copy_from_slice(&100u32.to_le_bytes());
        let err = PhotonFile::read(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("byte offset 42"), "{err}");

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(PhotonFile::read(&bad[..])
            .unwrap_err()
            .to_string()
            .contains("byte offset 0"));

        let err = PhotonFile::read(&buf[..30]).unwrap_err();
        assert!(err.to_string().contains("end of file"), "{err}");
        assert!(err.is_data_error());

        let mut long = vec![];
        small_file().write(&mut long).unwrap();
        long.push(0);
        assert!(PhotonFile::read(&long[..]).is_err());
    }

    #[test]
    fn sketch_file_round_trip() {
        let grid = FrequencyGrid::new(3, 100).unwrap();
        let file = sketch_photon_file(
            &{
                let mut b = vec![];
                small_file().write(&mut b).unwrap();
                b
            }[..],
            3,
        )
        .unwrap();
        assert_eq!(file.sketches[1], Sketch::zero(3));
        let direct = crate::sketch::sketch_of(&[0, 99, 42], &grid).unwrap();
        assert_eq!(file.sketches[2], direct);
        let mut buf = vec![];
        file.write(&mut buf).unwrap();
        assert_eq!(buf.len() as u64, file.byte_len());
        assert_eq!(SketchFile::read(&buf[..]).unwrap(), file);
    }

    #[test]
    fn single_photon_at_origin() {
        let f = PhotonFile::new(
            PhotonHeader {
                width: 1,
                height: 1,
                bins: 10,
                bin_width_ps: 1,
            },
            vec![vec![0]],
        )
        .unwrap();
        let mut b = vec![];
        f.write(&mut b).unwrap();
        let s = sketch_photon_file(&b[..], 1).unwrap();
        assert_eq!(s.sketches[0].z, vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(s.sketches[0].n, 1);
    }

    #[test]
    fn sketch_file_rejects_bad_modulus() {
        let s = SketchFile::new(1, 1, 10, 1, vec![Sketch::zero(1)]).unwrap();
        let mut buf = vec![];
        s.write(&mut buf).unwrap();
        buf[20..24].copy_from_slice(&3u32.to_le_bytes());
        buf[24..32].copy_from_slice(&2.0f64.to_le_bytes());
        let err = SketchFile::read(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("byte offset 20"), "{err}");
    }

    #[test]
    fn csv_ingest_basics() {
        let (f, r) = ingest_csv("".as_bytes(), 2, 2, 10, 1, false).unwrap();
        assert!(f.pixels.iter().all(Vec::is_empty));
        assert_eq!(r.rows, 0);
        let (f, _) = ingest_csv("0,0,5\n".as_bytes(), 2, 2, 10, 1, false).unwrap();
        assert_eq!(f.pixels[0], vec![5]);
        let (f, _) = ingest_csv("pixel_x,pixel_y,timestamp\n1,1,9\n".as_bytes(), 2, 2, 10, 1, false).unwrap();
        assert_eq!(f.pixels[3], vec![9]);
    }

    #[test]
    fn csv_ingest_reports_lines() {
        let text = "0,0,1\n0,0,2\n5,0,1\n0,0,abc\n1,0,3\n";
        let err = ingest_csv(text.as_bytes(), 2, 2, 10, 1, false).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let (f, r) = ingest_csv(text.as_bytes(), 2, 2, 10, 1, true).unwrap();
        assert_eq!(r.rows, 3);
        assert_eq!(r.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(f.pixels[0], vec![1, 2]);
        assert_eq!(f.pixels[1], vec![3]);
        let err = ingest_csv("0,0,10\n".as_bytes(), 2, 2, 10, 1, false).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let f = small_file();
        let mut original = vec![];
        f.write(&mut original).unwrap();
        let mut text = vec![];
        dump_csv(&f, &mut text).unwrap();
        let (back, _) = ingest_csv(&text[..], 3, 2, 100, 250, false).unwrap();
        let mut again = vec![];
        back.write(&mut again).unwrap();
        assert_eq!(original, again);
    }

    #[test]
    fn pgm_round_trip() {
        let map = DetectionMap {
            width: 3,
            height: 2,
            values: vec![1, 0, 0, 1, 1, 0],
        };
        let mut buf = vec![];
        write_pgm(&map, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&buf[buf.len() - 6..], &[255, 0, 0, 255, 255, 0]);
        assert_eq!(read_pgm(&buf[..]).unwrap(), map);
    }

    #[test]
    fn irf_text_round_trip() {
        let irf = Irf::gaussian_circular(64, 3.0, 10.0).unwrap();
        let mut buf = vec![];
        write_irf_text(&irf, &mut buf).unwrap();
        assert_eq!(read_irf_text(&buf[..]).unwrap(), irf);
        assert_eq!(
            read_irf_text("# pulse\n0, 1 2\n0\n".as_bytes()).unwrap().values(),
            &[0.0, 1.0, 2.0, 0.0]
        );
        assert!(read_irf_text("1\n-1\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("line 2"));
    }

    #[test]
    fn streaming_sketch_with_huge_histogram() {
        // T = 2^31: any per-pixel histogram would need gigabytes.
        let bins = 1u32 << 31;
        let xs = vec![0, 1 << 30, bins - 1, 12345];
        let f = PhotonFile::new(
            PhotonHeader {
                width: 2,
                height: 1,
                bins,
                bin_width_ps: 1,
            },
            vec![xs.clone(), vec![]],
        )
        .unwrap();
        let mut b = vec![];
        f.write(&mut b).unwrap();
        let s = sketch_photon_file(&b[..], 4).unwrap();
        let grid = FrequencyGrid::new(4, bins).unwrap();
        let direct = crate::sketch::sketch_of(&xs, &grid).unwrap();
        for (a, d) in s.sketches[0].z.iter().zip(&direct.z) {
            assert!((a - d).norm() < 1e-12);
        }
        // Half-period phase at j = 1 is exactly -1.
        let half = crate::sketch::sketch_of(&[1 << 30], &grid).unwrap();
        assert!((half.z[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }
}
