//! Dataset container (little-endian binary) and CSV export.
//!
//! Layout: magic `SDDS`, `u16` version, `u8` family tag, `u8` bias mode,
//! `u64` n, `u64` dim, `u64` seed, `f64` label noise, `u32` resolution,
//! `f64` feature noise, `u32` bias column count, `u32` exogenous column count,
//! the exogenous column names (`u16` length + UTF-8), then row-major `f64`
//! blocks: features, observed targets, bias columns, exogenous table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{BiasMode, Dataset, DatasetSpec, Family, Unit};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SDDS";
const VERSION: u16 = 1;

pub fn write_dataset<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    let ctx = data.spec.context();
    let exo_names: Vec<String> = data.units.first().map_or_else(Vec::new, |u| u.exogenous.keys().cloned().collect());
    let bias = data.bias(None)?;
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u8(data.spec.family.tag())?;
    w.write_u8(match data.spec.bias_mode {
        BiasMode::Biased => 0,
        BiasMode::Unbiased => 1,
    })?;
    w.write_u64::<LE>(data.n() as u64)?;
    w.write_u64::<LE>(data.dim() as u64)?;
    w.write_u64::<LE>(data.spec.seed)?;
    w.write_f64::<LE>(data.spec.label_noise)?;
    w.write_u32::<LE>(ctx.resolution as u32)?;
    w.write_f64::<LE>(ctx.feature_noise)?;
    w.write_u32::<LE>(bias.cols() as u32)?;
    w.write_u32::<LE>(exo_names.len() as u32)?;
    for name in &exo_names {
        w.write_u16::<LE>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
    }
    for u in &data.units {
        for &f in &u.features {
            w.write_f64::<LE>(f)?;
        }
    }
    for u in &data.units {
        w.write_f64::<LE>(u.label)?;
    }
    for &b in bias.as_slice() {
        w.write_f64::<LE>(b)?;
    }
    for u in &data.units {
        for name in &exo_names {
            w.write_f64::<LE>(u.exogenous[name])?;
        }
    }
    Ok(())
}

fn read_block<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; len];
    r.read_f64_into::<LE>(&mut out).map_err(|e| Error::Format(format!("truncated data block: {e}")))?;
    Ok(out)
}

/// Reads a container and re-derives every unit from its exogenous record.
/// Stored features must agree with the regenerated ones.
pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset container".into()));
    }
    let version = r.read_u16::<LE>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let family = Family::from_tag(r.read_u8()?)?;
    let bias_mode = match r.read_u8()? {
        0 => BiasMode::Biased,
        1 => BiasMode::Unbiased,
        t => return Err(Error::Format(format!("unknown bias mode tag {t}"))),
    };
    let n = r.read_u64::<LE>()? as usize;
    let dim = r.read_u64::<LE>()? as usize;
    let seed = r.read_u64::<LE>()?;
    let label_noise = r.read_f64::<LE>()?;
    let resolution = r.read_u32::<LE>()? as usize;
    let feature_noise = r.read_f64::<LE>()?;
    let n_bias = r.read_u32::<LE>()? as usize;
    let n_exo = r.read_u32::<LE>()? as usize;
    let mut names = Vec::with_capacity(n_exo);
    for _ in 0..n_exo {
        let len = r.read_u16::<LE>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        names.push(String::from_utf8(buf).map_err(|_| Error::Format("exogenous name is not UTF-8".into()))?);
    }
    let features = read_block(&mut r, n * dim)?;
    let labels = read_block(&mut r, n)?;
    let _bias = read_block(&mut r, n * n_bias)?;
    let exo = read_block(&mut r, n * n_exo)?;

    let spec = DatasetSpec {
        family,
        n,
        seed,
        label_noise,
        bias_mode,
        resolution: Some(resolution),
        feature_noise: Some(feature_noise),
    };
    let ctx = spec.context();
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let exogenous: BTreeMap<String, f64> =
            names.iter().enumerate().map(|(j, name)| (name.clone(), exo[i * n_exo + j])).collect();
        let mut unit = Unit::from_exogenous(ctx, exogenous)?;
        if unit.features[..] != features[i * dim..(i + 1) * dim] {
            return Err(Error::Format(format!("features of unit {i} do not match its exogenous record")));
        }
        unit.label = labels[i];
        units.push(unit);
    }
    Ok(Dataset { spec, units })
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// One row per unit: exogenous values, endogenous values, observed label, features.
pub fn write_csv<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let Some(first) = data.units.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = first.exogenous.keys().map(|k| format!("exo_{k}")).collect();
    header.extend(first.endogenous.keys().cloned());
    header.push("label".into());
    header.extend((0..data.dim()).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for u in &data.units {
        let row: Vec<String> = u
            .exogenous
            .values()
            .chain(u.endogenous.values())
            .chain(std::iter::once(&u.label))
            .chain(&u.features)
            .map(|v| v.to_string())
            .collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::generate;

    #[test]
    fn round_trip_every_family() {
        for family in Family::ALL {
            let data = generate(&DatasetSpec::new(family, 5, 21).with_resolution(12)).unwrap();
            let mut buf = Vec::new();
            write_dataset(&data, &mut buf).unwrap();
            let back = read_dataset(&buf[..]).unwrap();
            assert_eq!(back.units, data.units, "{family:?}");
            let mut again = Vec::new();
            write_dataset(&back, &mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(matches!(read_dataset(&b"NOPE"[..]), Err(Error::Format(_))));
        let data = generate(&DatasetSpec::new(Family::Blob, 3, 1).with_resolution(8)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        assert!(matches!(read_dataset(&buf[..buf.len() - 4]), Err(Error::Format(_))));
        let feature_start = buf.len() - 8 * (3 * 64 + 3 + 3 + 3 * data.units[0].exogenous.len());
        buf[feature_start] ^= 0xFF;
        assert!(matches!(read_dataset(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_has_named_columns() {
        let data = generate(&DatasetSpec::new(Family::WaterbirdsDiscrete, 4, 2)).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.contains("exo_u_bird") && header.contains("background") && header.contains("label"));
        assert_eq!(text.lines().count(), 5);
    }
}
