//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Files are always written little-endian with a 352-byte data offset
//! (348-byte header plus a zeroed 4-byte extension flag). Labels are stored
//! as uint8 and intensities as float32 with identity scaling.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Dims, IntensityVolume, Label, LabelVolume, Volume, VoxelSpacing};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
#[cfg(test)]
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;
pub const DT_INT8: i16 = 256;
pub const DT_UINT16: i16 = 512;
pub const DT_UINT32: i16 = 768;

/// The header fields this crate reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub magic: [u8; 4],
    pub big_endian: bool,
}

impl NiftiHeader {
    pub fn dims(&self) -> Result<Dims> {
        let d = |a: usize| -> Result<usize> {
            let v = self.dim[a];
            if v < 1 {
                return Err(Error::BadHeader(format!("dim[{a}] = {v}")));
            }
            Ok(v as usize)
        };
        let n = self.dim[0];
        let nx = d(1)?;
        let ny = if n >= 2 { d(2)? } else { 1 };
        let nz = if n >= 3 { d(3)? } else { 1 };
        for a in 4..=(n as usize).min(7) {
            if self.dim[a] > 1 {
                return Err(Error::BadHeader(format!(
                    "only 3D volumes are supported (dim[{a}] = {})",
                    self.dim[a]
                )));
            }
        }
        Dims::new(nx, ny, nz)
    }

    pub fn spacing(&self) -> Result<VoxelSpacing> {
        VoxelSpacing::new(
            self.pixdim[1] as f64,
            self.pixdim[2] as f64,
            self.pixdim[3] as f64,
        )
        .map_err(|_| {
            Error::BadHeader(format!(
                "spatial pixdim must be positive, got {:?}",
                &self.pixdim[1..4]
            ))
        })
    }

    /// Physical position of voxel (0,0,0): sform translation when present,
    /// otherwise the qform offset.
    pub fn origin(&self) -> [f64; 3] {
        if self.sform_code > 0 {
            [
                self.srow_x[3] as f64,
                self.srow_y[3] as f64,
                self.srow_z[3] as f64,
            ]
        } else {
            [
                self.qoffset[0] as f64,
                self.qoffset[1] as f64,
                self.qoffset[2] as f64,
            ]
        }
    }

    fn for_volume(
        dims: Dims,
        spacing: VoxelSpacing,
        origin: [f64; 3],
        datatype: i16,
        bitpix: i16,
    ) -> Self {
        let s = spacing.as_array();
        let o = origin.map(|v| v as f32);
        Self {
            dim: [
                3,
                dims.nx as i16,
                dims.ny as i16,
                dims.nz as i16,
                1,
                1,
                1,
                1,
            ],
            datatype,
            bitpix,
            pixdim: [
                1.0,
                s[0] as f32,
                s[1] as f32,
                s[2] as f32,
                1.0,
                1.0,
                1.0,
                1.0,
            ],
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            qform_code: 1,
            sform_code: 1,
            qoffset: o,
            srow_x: [s[0] as f32, 0.0, 0.0, o[0]],
            srow_y: [0.0, s[1] as f32, 0.0, o[1]],
            srow_z: [0.0, 0.0, s[2] as f32, o[2]],
            magic: MAGIC_SINGLE,
            big_endian: false,
        }
    }

    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                needed: HEADER_SIZE,
                available: bytes.len(),
            });
        }
        let le_size = LittleEndian::read_i32(&bytes[0..4]);
        let le_dim0 = LittleEndian::read_i16(&bytes[40..42]);
        let big_endian = if le_size == HEADER_SIZE as i32 && (1..=7).contains(&le_dim0) {
            false
        } else {
            let be_size = BigEndian::read_i32(&bytes[0..4]);
            let be_dim0 = BigEndian::read_i16(&bytes[40..42]);
            if be_size == HEADER_SIZE as i32 && (1..=7).contains(&be_dim0) {
                true
            } else {
                // decide on dim[0] alone so a bad magic is still reported as such
                !(1..=7).contains(&le_dim0)
            }
        };
        if big_endian {
            Self::parse_with::<BigEndian>(bytes, true)
        } else {
            Self::parse_with::<LittleEndian>(bytes, false)
        }
    }

    fn parse_with<B: ByteOrder>(b: &[u8], big_endian: bool) -> Result<Self> {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&b[344..348]);
        if magic != MAGIC_SINGLE {
            return Err(Error::BadMagic(magic));
        }
        let mut dim = [0i16; 8];
        for (a, d) in dim.iter_mut().enumerate() {
            *d = B::read_i16(&b[40 + 2 * a..]);
        }
        if !(1..=7).contains(&dim[0]) {
            return Err(Error::BadHeader(format!("dim[0] = {}", dim[0])));
        }
        let mut pixdim = [0f32; 8];
        for (a, p) in pixdim.iter_mut().enumerate() {
            *p = B::read_f32(&b[76 + 4 * a..]);
        }
        let row = |off: usize| -> [f32; 4] {
            [
                B::read_f32(&b[off..]),
                B::read_f32(&b[off + 4..]),
                B::read_f32(&b[off + 8..]),
                B::read_f32(&b[off + 12..]),
            ]
        };
        Ok(Self {
            dim,
            datatype: B::read_i16(&b[70..]),
            bitpix: B::read_i16(&b[72..]),
            pixdim,
            vox_offset: B::read_f32(&b[108..]),
            scl_slope: B::read_f32(&b[112..]),
            scl_inter: B::read_f32(&b[116..]),
            qform_code: B::read_i16(&b[252..]),
            sform_code: B::read_i16(&b[254..]),
            qoffset: [
                B::read_f32(&b[268..]),
                B::read_f32(&b[272..]),
                B::read_f32(&b[276..]),
            ],
            srow_x: row(280),
            srow_y: row(296),
            srow_z: row(312),
            magic,
            big_endian,
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        type B = LittleEndian;
        let mut b = vec![0u8; VOX_OFFSET];
        B::write_i32(&mut b[0..], HEADER_SIZE as i32);
        b[38] = b'r';
        for (a, &d) in self.dim.iter().enumerate() {
            B::write_i16(&mut b[40 + 2 * a..], d);
        }
        B::write_i16(&mut b[70..], self.datatype);
        B::write_i16(&mut b[72..], self.bitpix);
        for (a, &p) in self.pixdim.iter().enumerate() {
            B::write_f32(&mut b[76 + 4 * a..], p);
        }
        B::write_f32(&mut b[108..], self.vox_offset);
        B::write_f32(&mut b[112..], self.scl_slope);
        B::write_f32(&mut b[116..], self.scl_inter);
        // xyzt_units: millimeters
        b[123] = 2;
        B::write_i16(&mut b[252..], self.qform_code);
        B::write_i16(&mut b[254..], self.sform_code);
        for (a, &q) in self.qoffset.iter().enumerate() {
            B::write_f32(&mut b[268 + 4 * a..], q);
        }
        for (r, row) in [self.srow_x, self.srow_y, self.srow_z].iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                B::write_f32(&mut b[280 + 16 * r + 4 * c..], v);
            }
        }
        b[344..348].copy_from_slice(&self.magic);
        b
    }
}

/// Which kind of volume the caller wants back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Intensity,
    Labels,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Intensity(IntensityVolume),
    Labels(LabelVolume),
}

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    Ok(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    })
}

fn is_integer(datatype: i16) -> bool {
    !matches!(datatype, DT_FLOAT32 | DT_FLOAT64)
}

fn decode<B: ByteOrder>(datatype: i16, raw: &[u8], n: usize) -> Vec<f64> {
    let w = raw.len() / n.max(1);
    (0..n)
        .map(|i| {
            let s = &raw[i * w..(i + 1) * w];
            match datatype {
                DT_UINT8 => s[0] as f64,
                DT_INT8 => s[0] as i8 as f64,
                DT_INT16 => B::read_i16(s) as f64,
                DT_UINT16 => B::read_u16(s) as f64,
                DT_INT32 => B::read_i32(s) as f64,
                DT_UINT32 => B::read_u32(s) as f64,
                DT_FLOAT32 => B::read_f32(s) as f64,
                _ => B::read_f64(s),
            }
        })
        .collect()
}

fn decode_f32<B: ByteOrder>(raw: &[u8], n: usize) -> Vec<f32> {
    (0..n).map(|i| B::read_f32(&raw[4 * i..])).collect()
}

/// Parses an in-memory NIfTI-1 image (gzip detected by magic bytes).
pub fn parse_nifti(bytes: &[u8], kind: VolumeKind) -> Result<(NiftiVolume, NiftiHeader)> {
    let owned;
    let bytes = if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut buf = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut buf)
            .map_err(|e| Error::BadHeader(format!("gzip stream: {e}")))?;
        owned = buf;
        &owned[..]
    } else {
        bytes
    };
    let header = NiftiHeader::parse(bytes)?;
    let dims = header.dims()?;
    let spacing = header.spacing()?;
    let origin = header.origin();
    let width = bytes_per_voxel(header.datatype)?;
    let offset = header.vox_offset as usize;
    if offset < HEADER_SIZE {
        return Err(Error::BadHeader(format!(
            "vox_offset {} < 348",
            header.vox_offset
        )));
    }
    let needed = offset + width * dims.len();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let raw = &bytes[offset..needed];
    let n = dims.len();

    let volume = match kind {
        VolumeKind::Intensity => {
            let scaled =
                header.scl_slope != 0.0 && !(header.scl_slope == 1.0 && header.scl_inter == 0.0);
            let data: Vec<f32> = if header.datatype == DT_FLOAT32 && !scaled {
                if header.big_endian {
                    decode_f32::<BigEndian>(raw, n)
                } else {
                    decode_f32::<LittleEndian>(raw, n)
                }
            } else {
                let values = if header.big_endian {
                    decode::<BigEndian>(header.datatype, raw, n)
                } else {
                    decode::<LittleEndian>(header.datatype, raw, n)
                };
                let (m, b) = if scaled {
                    (header.scl_slope as f64, header.scl_inter as f64)
                } else {
                    (1.0, 0.0)
                };
                values.into_iter().map(|v| (v * m + b) as f32).collect()
            };
            NiftiVolume::Intensity(Volume::from_data(dims, spacing, origin, data)?)
        }
        VolumeKind::Labels => {
            if !is_integer(header.datatype) {
                return Err(Error::UnsupportedDatatype(header.datatype));
            }
            let values = if header.big_endian {
                decode::<BigEndian>(header.datatype, raw, n)
            } else {
                decode::<LittleEndian>(header.datatype, raw, n)
            };
            let data = values
                .into_iter()
                .map(|v| {
                    if (0.0..=10.0).contains(&v) {
                        Label::from_code(v as u8)
                    } else {
                        Err(Error::OutOfVocabulary(v))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            NiftiVolume::Labels(Volume::from_data(dims, spacing, origin, data)?)
        }
    };
    Ok((volume, header))
}

pub fn read_nifti(path: impl AsRef<Path>, kind: VolumeKind) -> Result<(NiftiVolume, NiftiHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes, kind)
}

pub fn read_intensity(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    match read_nifti(path, VolumeKind::Intensity)?.0 {
        NiftiVolume::Intensity(v) => Ok(v),
        NiftiVolume::Labels(_) => unreachable!("intensity requested"),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match read_nifti(path, VolumeKind::Labels)?.0 {
        NiftiVolume::Labels(v) => Ok(v),
        NiftiVolume::Intensity(_) => unreachable!("labels requested"),
    }
}

/// Volumes that can be stored as NIfTI-1.
pub trait NiftiData {
    fn header(&self) -> NiftiHeader;
    fn payload(&self) -> Vec<u8>;
}

impl NiftiData for IntensityVolume {
    fn header(&self) -> NiftiHeader {
        NiftiHeader::for_volume(self.dims(), self.spacing(), self.origin(), DT_FLOAT32, 32)
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = vec![0u8; 4 * self.data().len()];
        LittleEndian::write_f32_into(self.data(), &mut out);
        out
    }
}

impl NiftiData for LabelVolume {
    fn header(&self) -> NiftiHeader {
        NiftiHeader::for_volume(self.dims(), self.spacing(), self.origin(), DT_UINT8, 8)
    }

    fn payload(&self) -> Vec<u8> {
        self.codes()
    }
}

impl NiftiData for NiftiVolume {
    fn header(&self) -> NiftiHeader {
        match self {
            NiftiVolume::Intensity(v) => v.header(),
            NiftiVolume::Labels(v) => v.header(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            NiftiVolume::Intensity(v) => v.payload(),
            NiftiVolume::Labels(v) => v.payload(),
        }
    }
}

/// Serializes a volume to NIfTI-1 bytes, gzip-compressed when asked.
pub fn encode_nifti<V: NiftiData + ?Sized>(volume: &V, compress: bool) -> Vec<u8> {
    let header = volume.header();
    let mut raw = header.to_bytes();
    raw.extend_from_slice(&volume.payload());
    if !compress {
        return raw;
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("writing to memory");
    enc.finish().expect("writing to memory")
}

pub fn write_nifti<V: NiftiData + ?Sized>(
    volume: &V,
    path: impl AsRef<Path>,
    compress: bool,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nifti(volume, compress)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(codes: &[u8], dims: [usize; 3]) -> LabelVolume {
        LabelVolume::from_codes(
            Dims::from_array(dims).unwrap(),
            VoxelSpacing::new(0.25, 0.25, 0.5).unwrap(),
            [-3.0, 4.5, 10.0],
            codes,
        )
        .unwrap()
    }

    /// A uint8 NIfTI-1 file laid out by hand from the format definition.
    fn handmade_uint8(values: &[u8], dims: [i16; 3]) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim: [i16; 8] = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (a, d) in dim.iter().enumerate() {
            b[40 + 2 * a..42 + 2 * a].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&2i16.to_le_bytes());
        b[72..74].copy_from_slice(&8i16.to_le_bytes());
        for (a, p) in [1.0f32, 1.0, 1.0, 2.0].iter().enumerate() {
            b[76 + 4 * a..80 + 4 * a].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(values);
        b
    }

    #[test]
    fn handmade_uint8_opens_as_labels() {
        let bytes = handmade_uint8(&[0, 1, 6, 6, 1, 0], [3, 2, 1]);
        let (v, h) = parse_nifti(&bytes, VolumeKind::Labels).unwrap();
        let NiftiVolume::Labels(v) = v else { panic!() };
        assert_eq!(v.codes(), vec![0, 1, 6, 6, 1, 0]);
        assert_eq!(v.dims().as_array(), [3, 2, 1]);
        assert_eq!(v.spacing().as_array(), [1.0, 1.0, 2.0]);
        assert_eq!(h.datatype, DT_UINT8);
    }

    #[test]
    fn out_of_vocabulary_labels_rejected() {
        let bytes = handmade_uint8(&[0, 11], [2, 1, 1]);
        assert!(matches!(
            parse_nifti(&bytes, VolumeKind::Labels),
            Err(Error::OutOfVocabulary(v)) if v == 11.0
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = handmade_uint8(&[0, 1], [2, 1, 1]);
        bytes[344..348].copy_from_slice(b"abc\0");
        assert!(matches!(
            parse_nifti(&bytes, VolumeKind::Labels),
            Err(Error::BadMagic(_))
        ));
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(
            matches!(parse_nifti(&bytes, VolumeKind::Labels), Err(Error::BadMagic(m)) if m == MAGIC_PAIR)
        );
    }

    #[test]
    fn truncated_data_rejected() {
        let mut bytes = handmade_uint8(&[0, 1, 2, 3], [2, 2, 1]);
        bytes.pop();
        assert!(matches!(
            parse_nifti(&bytes, VolumeKind::Labels),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            parse_nifti(&bytes[..100], VolumeKind::Labels),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut bytes = handmade_uint8(&[0, 1], [2, 1, 1]);
        bytes[70..72].copy_from_slice(&128i16.to_le_bytes());
        assert!(matches!(
            parse_nifti(&bytes, VolumeKind::Intensity),
            Err(Error::UnsupportedDatatype(128))
        ));
    }

    #[test]
    fn big_endian_header_is_honored() {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        let dim: [i16; 8] = [3, 2, 1, 1, 1, 1, 1, 1];
        for (a, d) in dim.iter().enumerate() {
            b[40 + 2 * a..42 + 2 * a].copy_from_slice(&d.to_be_bytes());
        }
        b[70..72].copy_from_slice(&DT_INT16.to_be_bytes());
        b[72..74].copy_from_slice(&16i16.to_be_bytes());
        for (a, p) in [1.0f32, 0.5, 0.5, 0.5].iter().enumerate() {
            b[76 + 4 * a..80 + 4 * a].copy_from_slice(&p.to_be_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_be_bytes());
        b[112..116].copy_from_slice(&2f32.to_be_bytes());
        b[116..120].copy_from_slice(&(-1f32).to_be_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(&300i16.to_be_bytes());
        b.extend_from_slice(&(-7i16).to_be_bytes());
        let (v, h) = parse_nifti(&b, VolumeKind::Intensity).unwrap();
        assert!(h.big_endian);
        let NiftiVolume::Intensity(v) = v else {
            panic!()
        };
        assert_eq!(v.data(), &[599.0, -15.0]);
    }

    #[test]
    fn uncompressed_64_cube_size() {
        let v = labels(&vec![3u8; 64 * 64 * 64], [64, 64, 64]);
        let bytes = encode_nifti(&v, false);
        assert_eq!(bytes.len(), 352 + 262_144);
    }

    #[test]
    fn compressed_output_has_gzip_magic() {
        let v = labels(&[0, 1, 2, 3, 4, 5, 6, 7], [2, 2, 2]);
        let bytes = encode_nifti(&v, true);
        assert_eq!(&bytes[..2], &[0x1f, 0x8b]);
    }

    #[test]
    fn round_trip_both_kinds() {
        let lv = labels(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0], [3, 2, 2]);
        let data: Vec<f32> = (0..12).map(|i| i as f32 * -12.75 + 0.1).collect();
        let iv = IntensityVolume::from_data(lv.dims(), lv.spacing(), lv.origin(), data).unwrap();
        for compress in [false, true] {
            let (back, _) = parse_nifti(&encode_nifti(&lv, compress), VolumeKind::Labels).unwrap();
            assert_eq!(back, NiftiVolume::Labels(lv.clone()));
            let (back, _) =
                parse_nifti(&encode_nifti(&iv, compress), VolumeKind::Intensity).unwrap();
            let NiftiVolume::Intensity(back) = back else {
                panic!()
            };
            assert_eq!(back.dims(), iv.dims());
            assert_eq!(back.spacing(), iv.spacing());
            assert_eq!(back.origin(), iv.origin());
            let a: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = iv.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn float_file_cannot_open_as_labels() {
        let iv = IntensityVolume::from_data(
            Dims::new(2, 1, 1).unwrap(),
            VoxelSpacing::isotropic(1.0).unwrap(),
            [0.0; 3],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert!(matches!(
            parse_nifti(&encode_nifti(&iv, false), VolumeKind::Labels),
            Err(Error::UnsupportedDatatype(DT_FLOAT32))
        ));
    }
}
