//! Binary serialization of radar cubes.
//!
//! Layout (little-endian, after an 8-byte magic tag `RADCUBE1`):
//!
//! | field            | type           |
//! |------------------|----------------|
//! | n_samples        | u32            |
//! | n_chirps         | u32            |
//! | n_antennas       | u32            |
//! | center_freq      | f64            |
//! | bandwidth        | f64            |
//! | chirp_duration   | f64            |
//! | sample_rate      | f64            |
//! | antenna_spacing  | f64            |
//! | timestamp        | f64            |
//! | antenna offsets  | n_antennas × (f64 h, f64 v) |
//! | samples          | n_antennas · n_chirps · n_samples × (f32 re, f32 im), antenna-major |
//!
//! Samples are stored exactly as held in memory, so a write/read round trip
//! reproduces the cube bit for bit.

use std::io::{Read, Write};

use num_complex::Complex;

use super::cube::RadarCube;
use super::{ChirpConfig, DspError};

const MAGIC: &[u8; 8] = b"RADCUBE1";

pub fn write_cube<W: Write>(cube: &RadarCube, mut w: W) -> Result<(), DspError> {
    let cfg = &cube.config;
    cfg.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&cfg.n_samples.to_le_bytes())?;
    w.write_all(&cfg.n_chirps.to_le_bytes())?;
    w.write_all(&(cfg.n_antennas() as u32).to_le_bytes())?;
    for v in [
        cfg.center_freq,
        cfg.bandwidth,
        cfg.chirp_duration,
        cfg.sample_rate,
        cfg.antenna_spacing,
        cube.timestamp,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &(h, v) in &cfg.antennas {
        w.write_all(&h.to_le_bytes())?;
        w.write_all(&v.to_le_bytes())?;
    }
    for s in cube.samples() {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_cube<R: Read>(mut r: R) -> Result<RadarCube, DspError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DspError::MalformedCube("bad magic tag".into()));
    }
    let n_samples = read_u32(&mut r)?;
    let n_chirps = read_u32(&mut r)?;
    let n_antennas = read_u32(&mut r)?;
    if n_antennas == 0 || n_antennas > 4096 {
        return Err(DspError::MalformedCube(format!(
            "implausible antenna count {n_antennas}"
        )));
    }
    let center_freq = read_f64(&mut r)?;
    let bandwidth = read_f64(&mut r)?;
    let chirp_duration = read_f64(&mut r)?;
    let sample_rate = read_f64(&mut r)?;
    let antenna_spacing = read_f64(&mut r)?;
    let timestamp = read_f64(&mut r)?;
    let mut antennas = Vec::with_capacity(n_antennas as usize);
    for _ in 0..n_antennas {
        let h = read_f64(&mut r)?;
        let v = read_f64(&mut r)?;
        antennas.push((h, v));
    }
    let config = ChirpConfig {
        center_freq,
        bandwidth,
        chirp_duration,
        sample_rate,
        n_samples,
        n_chirps,
        antenna_spacing,
        antennas,
    };
    config.validate()?;
    let total = n_antennas as usize * n_chirps as usize * n_samples as usize;
    let mut data = Vec::with_capacity(total);
    let mut sample = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut sample)?;
        let re = f32::from_le_bytes(sample[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(sample[4..8].try_into().unwrap());
        data.push(Complex::new(re, im));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => {}
        _ => {
            return Err(DspError::MalformedCube(
                "trailing bytes after sample block".into(),
            ))
        }
    }
    RadarCube::from_data(config, timestamp, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DspError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, DspError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
