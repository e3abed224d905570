//! Versioned little-endian encodings of scheme objects. Every object starts
//! with a 4-byte magic and a `u16` version; polynomials use their own
//! format.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use super::ciphertext::{Ciphertext, Plaintext, Scale};
use super::keys::{EvaluationKey, KeyKind, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::rns::{ByteReader, RnsBasis};

const VERSION: u16 = 1;

fn header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

fn check_header(r: &mut ByteReader<'_>, magic: &[u8; 4], what: &str) -> Result<()> {
    if r.take(4)? != magic {
        return Err(Error::Serialization(format!("bad {what} magic")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Serialization(format!("unsupported {what} version {version}")));
    }
    Ok(())
}

fn put_bigint(out: &mut Vec<u8>, x: &BigInt) {
    let bytes = x.to_signed_bytes_le();
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

fn get_bigint(r: &mut ByteReader<'_>) -> Result<BigInt> {
    let len = r.u32()? as usize;
    Ok(BigInt::from_signed_bytes_le(r.take(len)?))
}

fn put_scale(out: &mut Vec<u8>, s: &Scale) {
    put_bigint(out, s.numer());
    put_bigint(out, s.denom());
}

fn get_scale(r: &mut ByteReader<'_>) -> Result<Scale> {
    let numer = get_bigint(r)?;
    let denom = get_bigint(r)?;
    if denom.is_zero() || numer <= BigInt::zero() || denom < BigInt::zero() {
        return Err(Error::Serialization("scale must be a positive rational".into()));
    }
    Ok(BigRational::new(numer, denom))
}

fn read_all<T>(bytes: &[u8], f: impl FnOnce(&mut ByteReader<'_>) -> Result<T>) -> Result<T> {
    let mut r = ByteReader::new(bytes);
    let out = f(&mut r)?;
    r.finish()?;
    Ok(out)
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        header(&mut out, b"RCTX");
        out.extend_from_slice(&(self.level as u32).to_le_bytes());
        out.push(self.pending_rescale as u8);
        put_scale(&mut out, &self.scale);
        out.extend_from_slice(&self.b.to_bytes());
        out.extend_from_slice(&self.a.to_bytes());
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        read_all(bytes, |r| {
            check_header(r, b"RCTX", "ciphertext")?;
            let level = r.u32()? as usize;
            let pending = r.u8()? == 1;
            let scale = get_scale(r)?;
            let b = Polynomial::read_from(basis.clone(), r)?;
            let a = Polynomial::read_from(basis, r)?;
            let mut ct = Ciphertext::from_parts(b, a, scale, level).map_err(|e| Error::Serialization(e.to_string()))?;
            ct.pending_rescale = pending;
            Ok(ct)
        })
    }
}

impl Plaintext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        header(&mut out, b"RPTX");
        out.extend_from_slice(&(self.level as u32).to_le_bytes());
        put_scale(&mut out, &self.scale);
        out.extend_from_slice(&self.poly.to_bytes());
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        read_all(bytes, |r| {
            check_header(r, b"RPTX", "plaintext")?;
            let level = r.u32()? as usize;
            let scale = get_scale(r)?;
            let poly = Polynomial::read_from(basis, r)?;
            if poly.num_rows() < level {
                return Err(Error::Serialization("plaintext has fewer rows than its level".into()));
            }
            Ok(Plaintext { poly, scale, level })
        })
    }
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        header(&mut out, b"RSKY");
        out.extend_from_slice(&(self.coeffs.len() as u32).to_le_bytes());
        out.extend(self.coeffs.iter().map(|&c| c as u8));
        out.extend_from_slice(&self.eval.to_bytes());
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        read_all(bytes, |r| {
            check_header(r, b"RSKY", "secret key")?;
            let n = r.u32()? as usize;
            if n != basis.n() {
                return Err(Error::Serialization(format!("ring degree {n} does not match basis")));
            }
            let coeffs: Vec<i8> = r.take(n)?.iter().map(|&c| c as i8).collect();
            if coeffs.iter().any(|c| !(-1..=1).contains(c)) {
                return Err(Error::Serialization("secret coefficients must be ternary".into()));
            }
            let eval = Polynomial::read_from(basis, r)?;
            Ok(SecretKey { coeffs, eval })
        })
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        header(&mut out, b"RPKY");
        out.extend_from_slice(&self.b.to_bytes());
        out.extend_from_slice(&self.a.to_bytes());
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        read_all(bytes, |r| {
            check_header(r, b"RPKY", "public key")?;
            let b = Polynomial::read_from(basis.clone(), r)?;
            let a = Polynomial::read_from(basis, r)?;
            if b.rows() != a.rows() {
                return Err(Error::Serialization("public key parts disagree".into()));
            }
            Ok(PublicKey { b, a })
        })
    }
}

impl EvaluationKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        header(&mut out, b"REVK");
        let (tag, g) = match self.kind {
            KeyKind::Relinearization => (0u8, 0u64),
            KeyKind::Rotation(g) => (1, g),
        };
        out.push(tag);
        out.extend_from_slice(&g.to_le_bytes());
        out.extend_from_slice(&(self.digits.len() as u32).to_le_bytes());
        for (b, a) in &self.digits {
            out.extend_from_slice(&b.to_bytes());
            out.extend_from_slice(&a.to_bytes());
        }
        out
    }

    pub fn from_bytes(basis: Arc<RnsBasis>, bytes: &[u8]) -> Result<Self> {
        read_all(bytes, |r| {
            check_header(r, b"REVK", "evaluation key")?;
            let kind = match (r.u8()?, r.u64()?) {
                (0, _) => KeyKind::Relinearization,
                (1, g) if g % 2 == 1 => KeyKind::Rotation(g),
                (t, g) => return Err(Error::Serialization(format!("bad key kind {t} / {g}"))),
            };
            let count = r.u32()? as usize;
            if count > basis.l() {
                return Err(Error::Serialization(format!("{count} digits exceed the basis")));
            }
            let mut digits = Vec::with_capacity(count);
            for _ in 0..count {
                let b = Polynomial::read_from(basis.clone(), r)?;
                let a = Polynomial::read_from(basis.clone(), r)?;
                if b.rows() != a.rows() {
                    return Err(Error::Serialization("key digit parts disagree".into()));
                }
                digits.push((b, a));
            }
            Ok(EvaluationKey { kind, digits })
        })
    }
}
