//! Little-endian cursor shared by the binary formats.

use crate::error::{Error, Result};

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

macro_rules! read_le {
    ($name:ident, $t:ty) => {
        pub fn $name(&mut self) -> Result<$t> {
            let b = self.take(std::mem::size_of::<$t>())?;
            Ok(<$t>::from_le_bytes(b.try_into().expect("slice has the requested length")))
        }
    };
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(format!("truncated {}", self.what)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    /// Checks a magic string followed by a version byte.
    pub fn header(&mut self, magic: &[u8], version: u8) -> Result<()> {
        if self.take(magic.len())? != magic {
            return Err(Error::format(format!("not a {} (bad magic)", self.what)));
        }
        let v = self.u8()?;
        if v != version {
            return Err(Error::format(format!("{} version {v} is not supported (expected {version})", self.what)));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!("{} has {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    read_le!(u8, u8);
    read_le!(u16, u16);
    read_le!(u32, u32);
    read_le!(u64, u64);
    read_le!(f32, f32);
    read_le!(f64, f64);

    pub fn len_u32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}
