//! File codecs: PFM images, `DSLH` cubes, `DSLC` correspondence models and
//! CSV tables.

use dsl_core::correspondence::{CorrespondenceModel, CorrespondenceSample, PixelLattice, PowerLaw, PowerLawFit};
use dsl_core::image::ScalarMap;
use dsl_core::optics::Order;
use dsl_core::{Cube, EfficiencySet, Image, ResponseSet, SpectralCurve, WavelengthGrid};

use crate::error::DecodeError;

type Decoded<T> = std::result::Result<T, DecodeError>;

/// Whitespace-delimited header tokens with their offsets.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Decoded<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DecodeError::new(start, "unexpected end of header"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| DecodeError::new(start, "header is not ASCII"))?;
        Ok((start, s))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Decoded<T> {
        let (at, s) = self.token()?;
        s.parse().map_err(|_| DecodeError::new(at, format!("expected {what}, found {s:?}")))
    }

    /// Skips the single whitespace byte that ends the header.
    fn end(&mut self) -> Decoded<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(DecodeError::new(self.pos, "header must end with a newline")),
        }
    }
}

fn pfm_header(channels: usize, width: usize, height: usize) -> Vec<u8> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    format!("{tag}\n{width} {height}\n-1.0\n").into_bytes()
}

fn pfm_body(data: &[f64], channels: usize, width: usize, height: usize, out: &mut Vec<u8>) {
    let row = channels * width;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

/// PFM bytes, bottom row first as the format requires.
pub fn encode_pfm(image: &Image) -> Vec<u8> {
    let mut out = pfm_header(3, image.width(), image.height());
    pfm_body(image.data(), 3, image.width(), image.height(), &mut out);
    out
}

/// Single-channel PFM.
pub fn encode_pfm_gray(map: &ScalarMap) -> Vec<u8> {
    let mut out = pfm_header(1, map.width(), map.height());
    pfm_body(map.data(), 1, map.width(), map.height(), &mut out);
    out
}

/// Decodes either PFM flavor into (channels, width, height, top-down data).
pub fn decode_pfm_raw(bytes: &[u8]) -> Decoded<(usize, usize, usize, Vec<f64>)> {
    let mut h = Header { bytes, pos: 0 };
    let (at, tag) = h.token()?;
    let channels: usize = match tag {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(DecodeError::new(at, format!("bad PFM magic {tag:?}"))),
    };
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let scale_at = h.pos;
    let scale: f64 = h.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(DecodeError::new(scale_at, "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let start = h.end()?;
    let n = channels
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .ok_or_else(|| DecodeError::new(0, "image dimensions overflow"))?;
    let need = n * 4;
    if bytes.len() < start + need {
        return Err(DecodeError::new(bytes.len(), format!("expected {need} bytes of pixel data, found {}", bytes.len() - start)));
    }
    if bytes.len() > start + need {
        return Err(DecodeError::new(start + need, "trailing bytes after pixel data"));
    }
    let row = channels * width;
    let mut data = vec![0.0; n];
    for (k, chunk) in bytes[start..].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = v as f64;
    }
    Ok((channels, width, height, data))
}

pub fn decode_pfm(bytes: &[u8]) -> Decoded<Image> {
    let (c, w, h, data) = decode_pfm_raw(bytes)?;
    if c != 3 {
        return Err(DecodeError::new(0, "expected a 3-channel PFM"));
    }
    Ok(Image::from_data(w, h, data).expect("sizes checked"))
}

pub fn decode_pfm_gray(bytes: &[u8]) -> Decoded<ScalarMap> {
    let (c, w, h, data) = decode_pfm_raw(bytes)?;
    if c != 1 {
        return Err(DecodeError::new(0, "expected a single-channel PFM"));
    }
    Ok(ScalarMap::from_data(w, h, data).expect("sizes checked"))
}

pub const DSLH_MAGIC: &[u8; 4] = b"DSLH";
pub const DSLH_VERSION: u32 = 1;

/// Cube as `DSLH`: magic, version, width, height, band count (u32 LE), then
/// f32 LE values, row-major with wavelength fastest.
pub fn encode_cube(cube: &Cube) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * cube.data().len());
    out.extend_from_slice(DSLH_MAGIC);
    for v in [DSLH_VERSION, cube.width() as u32, cube.height() as u32, cube.bands() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Decoded<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DecodeError::new(self.bytes.len(), format!("truncated: needed {n} more bytes at {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Decoded<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Decoded<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Decoded<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, m: &[u8; 4], version: u32) -> Decoded<()> {
        let got = self.take(4)?;
        if got != m {
            return Err(DecodeError::new(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(m))));
        }
        let at = self.pos;
        let v = self.u32()?;
        if v != version {
            return Err(DecodeError::new(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Decoded<()> {
        if self.pos != self.bytes.len() {
            return Err(DecodeError::new(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

/// Decodes a `DSLH` cube. The file carries only the band count, so the
/// wavelength grid comes from `grid` (or 430 nm in 5 nm steps).
pub fn decode_cube(bytes: &[u8], grid: Option<WavelengthGrid>) -> Decoded<Cube> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(DSLH_MAGIC, DSLH_VERSION)?;
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let at = r.pos;
    let n = r.u32()? as usize;
    let grid = match grid {
        Some(g) if g.len() == n => g,
        Some(g) => return Err(DecodeError::new(at, format!("cube has {n} bands, expected {}", g.len()))),
        None => WavelengthGrid::with_count(430.0, 5.0, n).map_err(|e| DecodeError::new(at, e.to_string()))?,
    };
    let total = w.checked_mul(h).and_then(|v| v.checked_mul(n)).ok_or_else(|| DecodeError::new(at, "cube dimensions overflow"))?;
    if bytes.len() - r.pos != 4 * total {
        return Err(DecodeError::new(r.pos, format!("expected {} bytes of cube data, found {}", 4 * total, bytes.len() - r.pos)));
    }
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    Ok(Cube::from_data(w, h, grid, data).expect("sizes checked"))
}

pub const DSLC_MAGIC: &[u8; 4] = b"DSLC";
pub const DSLC_VERSION: u32 = 1;

/// Correspondence model as `DSLC`: lattice, knots, depths, projector width,
/// table step (NaN when untabulated) and every fit, all little-endian.
pub fn encode_model(model: &CorrespondenceModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DSLC_MAGIC);
    out.extend_from_slice(&DSLC_VERSION.to_le_bytes());
    let l = model.lattice();
    for v in [l.origin[0], l.origin[1], l.spacing[0], l.spacing[1]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in l.counts {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for list in [model.knots(), model.depths()] {
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for v in list {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&model.projector_width().to_le_bytes());
    out.extend_from_slice(&model.table_step().unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&(model.fits().len() as u32).to_le_bytes());
    for f in model.fits() {
        match f {
            None => out.push(0),
            Some(f) => {
                out.push(1);
                for v in [f.law.alpha, f.law.beta, f.law.gamma, f.rms] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(f.iterations as u32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Decoded<CorrespondenceModel> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(DSLC_MAGIC, DSLC_VERSION)?;
    let at = r.pos;
    let origin = [r.f64()?, r.f64()?];
    let spacing = [r.f64()?, r.f64()?];
    let counts = [r.u32()? as usize, r.u32()? as usize];
    let lattice = PixelLattice::new(origin, spacing, counts).map_err(|e| DecodeError::new(at, e.to_string()))?;
    let list = |r: &mut Reader| -> Decoded<Vec<f64>> {
        let n = r.u32()? as usize;
        if n > r.bytes.len() {
            return Err(DecodeError::new(r.pos, "list length exceeds file size"));
        }
        (0..n).map(|_| r.f64()).collect()
    };
    let knots = list(&mut r)?;
    let depths = list(&mut r)?;
    let pw = r.u32()?;
    let step = r.f64()?;
    let fits_at = r.pos;
    let n = r.u32()? as usize;
    if n > r.bytes.len() {
        return Err(DecodeError::new(fits_at, "fit count exceeds file size"));
    }
    let mut fits = Vec::with_capacity(n);
    for _ in 0..n {
        let flag_at = r.pos;
        fits.push(match r.u8()? {
            0 => None,
            1 => {
                let (alpha, beta, gamma, rms) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                Some(PowerLawFit { law: PowerLaw { alpha, beta, gamma }, rms, iterations: r.u32()? as usize })
            }
            v => return Err(DecodeError::new(flag_at, format!("bad fit flag {v}"))),
        });
    }
    r.finish()?;
    let model = CorrespondenceModel::from_parts(lattice, knots, depths, pw, fits).map_err(|e| DecodeError::new(fits_at, e.to_string()))?;
    if step.is_nan() {
        Ok(model)
    } else {
        model.with_depth_table(step).map_err(|e| DecodeError::new(fits_at, e.to_string()))
    }
}

fn csv_error(e: &csv::Error) -> DecodeError {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    DecodeError::new(offset, e.to_string())
}

fn fmt(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v:?}")
}

/// Named spectra as CSV: a `wavelength_nm` column, then one per curve.
pub fn encode_spectra(names: &[String], curves: &[SpectralCurve]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["wavelength_nm".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    if let Some(first) = curves.first() {
        for (j, l) in first.grid().wavelengths().enumerate() {
            let mut rec = vec![fmt(l)];
            rec.extend(curves.iter().map(|c| fmt(c.value(j))));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn decode_spectra(bytes: &[u8]) -> Decoded<(Vec<String>, Vec<SpectralCurve>)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| csv_error(&e))?.clone();
    if header.get(0) != Some("wavelength_nm") || header.len() < 2 {
        return Err(DecodeError::new(0, "first column must be wavelength_nm followed by at least one curve"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut nm = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let at = rec.position().map_or(0, |p| p.byte() as usize);
        let parse = |i: usize| -> Decoded<f64> {
            let s = rec.get(i).unwrap_or("");
            s.trim().parse().map_err(|_| DecodeError::new(at, format!("bad number {s:?} in column {}", i + 1)))
        };
        nm.push(parse(0)?);
        for (k, c) in cols.iter_mut().enumerate() {
            c.push(parse(k + 1)?);
        }
    }
    if nm.len() < 2 {
        return Err(DecodeError::new(bytes.len(), "need at least two wavelengths"));
    }
    let step = nm[1] - nm[0];
    if nm.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6) {
        return Err(DecodeError::new(0, "wavelengths must be evenly spaced"));
    }
    let grid = WavelengthGrid::with_count(nm[0], step, nm.len()).map_err(|e| DecodeError::new(0, e.to_string()))?;
    let curves = cols
        .into_iter()
        .map(|v| SpectralCurve::new(grid, v).map_err(|e| DecodeError::new(0, e.to_string())))
        .collect::<Decoded<Vec<_>>>()?;
    Ok((names, curves))
}

/// Column names of a correspondence sample table.
pub const SAMPLE_HEADER: [&str; 6] = ["px", "py", "z_mm", "m", "lambda_nm", "q_col"];

pub fn encode_samples(samples: &[CorrespondenceSample]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SAMPLE_HEADER).expect("in-memory write");
    for s in samples {
        w.write_record([
            fmt(s.pixel[0]),
            fmt(s.pixel[1]),
            fmt(s.depth_mm),
            s.order.value().to_string(),
            fmt(s.wavelength_nm),
            fmt(s.column),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn decode_samples(bytes: &[u8]) -> Decoded<Vec<CorrespondenceSample>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| csv_error(&e))?;
    if header.iter().map(str::trim).ne(SAMPLE_HEADER) {
        return Err(DecodeError::new(0, format!("sample header must be {}", SAMPLE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let at = rec.position().map_or(0, |p| p.byte() as usize);
        if rec.len() != 6 {
            return Err(DecodeError::new(at, format!("expected 6 fields, found {}", rec.len())));
        }
        let f = |i: usize| -> Decoded<f64> {
            rec[i].trim().parse().map_err(|_| DecodeError::new(at, format!("bad number {:?}", &rec[i])))
        };
        let m: i32 = rec[3].trim().parse().map_err(|_| DecodeError::new(at, format!("bad order {:?}", &rec[3])))?;
        let order = Order::from_value(m).map_err(|e| DecodeError::new(at, e.to_string()))?;
        out.push(CorrespondenceSample { pixel: [f(0)?, f(1)?], depth_mm: f(2)?, order, wavelength_nm: f(4)?, column: f(5)? });
    }
    Ok(out)
}

/// Camera or projector responses as `wavelength_nm,r,g,b`.
pub fn encode_rgb_curves(curves: &[SpectralCurve; 3]) -> Vec<u8> {
    encode_spectra(&["r".into(), "g".into(), "b".into()], curves)
}

pub fn decode_rgb_curves(bytes: &[u8]) -> Decoded<[SpectralCurve; 3]> {
    let (names, curves) = decode_spectra(bytes)?;
    if names != ["r", "g", "b"] {
        return Err(DecodeError::new(0, "response table must have columns wavelength_nm,r,g,b"));
    }
    Ok(curves.try_into().expect("three columns"))
}

pub fn encode_responses(r: &ResponseSet) -> (Vec<u8>, Vec<u8>) {
    (encode_rgb_curves(r.cam()), encode_rgb_curves(r.proj()))
}

/// Efficiencies as `wavelength_nm,minus,zero,plus`; an absent order is
/// written as an empty column.
pub fn encode_efficiency(eta: &EfficiencySet) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["wavelength_nm", "minus", "zero", "plus"]).expect("in-memory write");
    for (j, l) in eta.grid().wavelengths().enumerate() {
        let cell = |o: Order| eta.get(o).map_or(String::new(), |c| fmt(c.value(j)));
        w.write_record([fmt(l), cell(Order::Minus), cell(Order::Zero), cell(Order::Plus)]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn decode_efficiency(bytes: &[u8]) -> Decoded<EfficiencySet> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| csv_error(&e))?;
    if header.iter().map(str::trim).ne(["wavelength_nm", "minus", "zero", "plus"]) {
        return Err(DecodeError::new(0, "efficiency table must have columns wavelength_nm,minus,zero,plus"));
    }
    let mut nm = Vec::new();
    let mut cols: [Vec<Option<f64>>; 3] = Default::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let at = rec.position().map_or(0, |p| p.byte() as usize);
        let cell = |i: usize| -> Decoded<Option<f64>> {
            let s = rec.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| DecodeError::new(at, format!("bad number {s:?}")))
        };
        nm.push(cell(0)?.ok_or_else(|| DecodeError::new(at, "missing wavelength"))?);
        for (k, c) in cols.iter_mut().enumerate() {
            c.push(cell(k + 1)?);
        }
    }
    if nm.len() < 2 {
        return Err(DecodeError::new(bytes.len(), "need at least two wavelengths"));
    }
    let grid = WavelengthGrid::with_count(nm[0], nm[1] - nm[0], nm.len()).map_err(|e| DecodeError::new(0, e.to_string()))?;
    let curve = |c: &[Option<f64>]| -> Decoded<Option<SpectralCurve>> {
        if c.iter().all(Option::is_none) {
            return Ok(None);
        }
        let v = c.iter().map(|v| v.ok_or_else(|| DecodeError::new(0, "efficiency column has gaps"))).collect::<Decoded<Vec<_>>>()?;
        SpectralCurve::new(grid, v).map(Some).map_err(|e| DecodeError::new(0, e.to_string()))
    };
    let zero = curve(&cols[1])?.ok_or_else(|| DecodeError::new(0, "zero-order column is required"))?;
    EfficiencySet::new(zero, curve(&cols[0])?, curve(&cols[2])?).map_err(|e| DecodeError::new(0, e.to_string()))
}

/// Simple table writer for diagnostics and sweeps.
pub fn encode_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn num(v: f64) -> String {
    fmt(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_row_order() {
        let mut im = Image::zeros(2, 2);
        im.set(0, 0, [1.0, 2.0, 3.0]);
        let bytes = encode_pfm(&im);
        let header = b"PF\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        // top row stored last
        let last = &bytes[bytes.len() - 24..bytes.len() - 20];
        assert_eq!(f32::from_le_bytes(last.try_into().unwrap()), 1.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), im);
    }

    #[test]
    fn pfm_big_endian_and_errors() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm_gray(&bytes).unwrap().get(0, 0), 2.5);
        let e = decode_pfm(b"PX\n1 1\n-1\n").unwrap_err();
        assert_eq!(e.offset, 0);
        let e = decode_pfm(b"PF\n1 x\n-1\n").unwrap_err();
        assert_eq!(e.offset, 5);
        let e = decode_pfm(b"PF\n1 1\n-1\n\0\0").unwrap_err();
        assert!(e.message.contains("expected 12 bytes"));
    }

    #[test]
    fn cube_errors() {
        let g = WavelengthGrid::standard();
        let c = Cube::zeros(2, 1, g);
        let mut b = encode_cube(&c);
        assert_eq!(decode_cube(&b, Some(g)).unwrap(), c);
        b[0] = b'X';
        assert_eq!(decode_cube(&b, None).unwrap_err().offset, 0);
        let b = encode_cube(&c);
        assert!(decode_cube(&b[..b.len() - 1], None).is_err());
        let other = WavelengthGrid::with_count(400.0, 10.0, 10).unwrap();
        assert_eq!(decode_cube(&b, Some(other)).unwrap_err().offset, 16);
    }

    #[test]
    fn csv_errors_carry_offsets() {
        let text = b"wavelength_nm,a\n500,0.1\n505,zz\n";
        let e = decode_spectra(text).unwrap_err();
        assert_eq!(e.offset, 24);
        let e = decode_samples(b"px,py,z_mm,m,lambda_nm,q_col\n1,2,3,5,500,4\n").unwrap_err();
        assert_eq!(e.offset, 29);
    }
}
