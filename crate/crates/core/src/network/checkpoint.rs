//! Binary checkpoint container.
//!
//! Layout: one version byte, a little-endian `u32` header length, the
//! network config as JSON, then every parameter in declaration order as
//! little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u8 = 1;

impl<T: Scalar> Network<T> {
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.count_parameters() * 4);
        for p in self.parameters() {
            for v in p.value.data() {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                version[0]
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let config: NetworkConfig = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut net = Network::build(config, 0)?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != net.count_parameters() * 4 {
            return Err(Error::Format(format!(
                "checkpoint holds {} bytes of parameters, network needs {}",
                body.len(),
                net.count_parameters() * 4
            )));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for p in net.parameters_mut() {
            for v in p.value.data_mut() {
                *v = T::lit(f64::from(values.next().expect("length checked")));
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let net = Network::<f32>::build(NetworkConfig::desk(), 5).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf[0], CHECKPOINT_VERSION);
        let back = Network::<f32>::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.checksum(), net.checksum());
    }

    #[test]
    fn rejects_truncation_and_bad_version() {
        let net = Network::<f32>::build(NetworkConfig::desk(), 5).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert!(Network::<f32>::read_checkpoint(&buf[..buf.len() - 4]).is_err());
        buf[0] = 9;
        assert!(Network::<f32>::read_checkpoint(buf.as_slice()).is_err());
    }
}
