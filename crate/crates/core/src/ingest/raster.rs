use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::colortype::{Gray32Float, RGB32Float};
use tiff::encoder::{DirectoryEncoder, TiffEncoder, TiffKind};
use tiff::tags::Tag;
use tiff::ColorType;

use super::Modality;
use crate::error::{Error, Result};

const EXTENT_TOLERANCE_M: f64 = 1e-6;

/// Axis-aligned ground extent in projected meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub west: f64,
    pub north: f64,
    pub east: f64,
    pub south: f64,
}

impl Extent {
    pub fn contains(&self, easting: f64, northing: f64) -> bool {
        easting >= self.west && easting < self.east && northing <= self.north && northing > self.south
    }

    fn approx_eq(&self, other: &Extent) -> bool {
        (self.west - other.west).abs() <= EXTENT_TOLERANCE_M
            && (self.north - other.north).abs() <= EXTENT_TOLERANCE_M
            && (self.east - other.east).abs() <= EXTENT_TOLERANCE_M
            && (self.south - other.south).abs() <= EXTENT_TOLERANCE_M
    }
}

/// One modality's georeferenced raster, stored band-major `(bands, height, width)`.
///
/// `origin` is the north-west corner; rows run south and columns run east.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterMosaic {
    pub modality: Modality,
    pub resolution_m: f64,
    pub origin: (f64, f64),
    bands: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    valid: Option<Vec<bool>>,
}

impl RasterMosaic {
    pub fn new(
        modality: Modality,
        resolution_m: f64,
        origin: (f64, f64),
        bands: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let invalid = |message: String| Error::Raster {
            path: format!("<{modality} mosaic>").into(),
            message,
        };
        if bands != modality.bands() {
            return Err(invalid(format!(
                "{modality} needs {} band(s), got {bands}",
                modality.bands()
            )));
        }
        if !(resolution_m > 0.0 && resolution_m.is_finite()) {
            return Err(invalid(format!("resolution must be positive, got {resolution_m}")));
        }
        if height == 0 || width == 0 {
            return Err(invalid("raster has zero size".into()));
        }
        if pixels.len() != bands * height * width {
            return Err(invalid(format!(
                "{} pixels for a {bands}x{height}x{width} raster",
                pixels.len()
            )));
        }
        Ok(Self {
            modality,
            resolution_m,
            origin,
            bands,
            height,
            width,
            pixels,
            valid: None,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.pixels[b * plane..(b + 1) * plane]
    }

    pub fn extent(&self) -> Extent {
        let (west, north) = self.origin;
        Extent {
            west,
            north,
            east: west + self.width as f64 * self.resolution_m,
            south: north - self.height as f64 * self.resolution_m,
        }
    }

    /// Per-pixel validity (shared across bands); `None` when every pixel is valid.
    pub fn validity_mask(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn invalid_count(&self) -> usize {
        self.valid
            .as_ref()
            .map_or(0, |mask| mask.iter().filter(|v| !**v).count())
    }

    /// Marks pixels equal to `nodata` (in any band) or non-finite as invalid.
    pub fn mask_nodata(&mut self, nodata: Option<f64>) {
        let plane = self.height * self.width;
        let mut mask = vec![true; plane];
        for b in 0..self.bands {
            for (i, &v) in self.pixels[b * plane..(b + 1) * plane].iter().enumerate() {
                if !v.is_finite() || nodata.is_some_and(|nd| (v as f64 - nd).abs() <= f64::EPSILON * nd.abs().max(1.0)) {
                    mask[i] = false;
                }
            }
        }
        self.valid = mask.iter().any(|v| !v).then_some(mask);
    }

    /// Replaces invalid pixels with the mean of the valid pixels of their band.
    pub fn fill_nodata(&mut self) -> Result<()> {
        let Some(mask) = self.valid.take() else {
            return Ok(());
        };
        let plane = self.height * self.width;
        for b in 0..self.bands {
            let band = &mut self.pixels[b * plane..(b + 1) * plane];
            let (sum, count) = band
                .iter()
                .zip(&mask)
                .filter(|(_, ok)| **ok)
                .fold((0.0f64, 0usize), |(s, c), (&v, _)| (s + v as f64, c + 1));
            if count == 0 {
                return Err(Error::Raster {
                    path: format!("<{} mosaic>", self.modality).into(),
                    message: format!("band {b} has no valid pixels"),
                });
            }
            let mean = (sum / count as f64) as f32;
            for (v, ok) in band.iter_mut().zip(&mask) {
                if !ok {
                    *v = mean;
                }
            }
        }
        Ok(())
    }
}

/// The three co-registered mosaics of one site.
#[derive(Clone, Debug)]
pub struct ModalityMosaics {
    pub thermal: RasterMosaic,
    pub rgb: RasterMosaic,
    pub lidar: RasterMosaic,
}

impl ModalityMosaics {
    pub fn get(&self, modality: Modality) -> &RasterMosaic {
        match modality {
            Modality::Thermal => &self.thermal,
            Modality::Rgb => &self.rgb,
            Modality::Lidar => &self.lidar,
        }
    }

    pub fn get_mut(&mut self, modality: Modality) -> &mut RasterMosaic {
        match modality {
            Modality::Thermal => &mut self.thermal,
            Modality::Rgb => &mut self.rgb,
            Modality::Lidar => &mut self.lidar,
        }
    }

    /// The three mosaics must share one ground extent within a micrometer.
    pub fn check_alignment(&self) -> Result<()> {
        let reference = self.thermal.extent();
        for mosaic in [&self.rgb, &self.lidar] {
            if !mosaic.extent().approx_eq(&reference) {
                return Err(Error::Grid(format!(
                    "{} extent {:?} differs from thermal extent {:?}",
                    mosaic.modality,
                    mosaic.extent(),
                    reference
                )));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> Extent {
        self.thermal.extent()
    }
}

fn raster_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Raster {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn to_f32(result: DecodingResult) -> Option<Vec<f32>> {
    Some(match result {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return None,
    })
}

/// Reads a single-image GeoTIFF carrying pixel-scale and tie-point tags.
///
/// Pixels flagged by the `GDAL_NODATA` tag (or non-finite) are recorded in
/// the validity mask, not altered.
pub fn load_mosaic(path: &Path, modality: Modality) -> Result<RasterMosaic> {
    let file = File::open(path).map_err(Error::io(path))?;
    let tiff_err = |e: tiff::TiffError| raster_error(path, e.to_string());
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(tiff_err)?;
    let (width, height) = decoder.dimensions().map_err(tiff_err)?;
    let bands = match decoder.colortype().map_err(tiff_err)? {
        ColorType::Gray(_) => 1,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) => 4,
        ColorType::Multiband { num_samples, .. } => num_samples as usize,
        other => return Err(raster_error(path, format!("unsupported color type {other:?}"))),
    };
    if bands != modality.bands() {
        return Err(raster_error(
            path,
            format!("{bands}-band raster cannot be {modality} ({} band(s) expected)", modality.bands()),
        ));
    }
    let scale = decoder
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(tiff_err)?
        .ok_or_else(|| raster_error(path, "missing georeferencing (ModelPixelScale tag)"))?
        .into_f64_vec()
        .map_err(tiff_err)?;
    let tie = decoder
        .find_tag(Tag::ModelTiepointTag)
        .map_err(tiff_err)?
        .ok_or_else(|| raster_error(path, "missing georeferencing (ModelTiepoint tag)"))?
        .into_f64_vec()
        .map_err(tiff_err)?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(raster_error(path, "malformed georeferencing tags"));
    }
    let (sx, sy) = (scale[0], scale[1]);
    if (sx - sy).abs() > 1e-9 * sx.abs().max(1.0) {
        return Err(raster_error(path, format!("non-square pixels {sx} x {sy}")));
    }
    let origin = (tie[3] - tie[0] * sx, tie[4] + tie[1] * sy);
    let nodata = match decoder.find_tag(Tag::GdalNodata).map_err(tiff_err)? {
        Some(value) => {
            let text = value.into_string().map_err(tiff_err)?;
            let text = text.trim_end_matches('\0').trim();
            Some(text.parse::<f64>().map_err(|_| raster_error(path, format!("bad nodata value {text:?}")))?)
        }
        None => None,
    };
    let decoded = decoder.read_image().map_err(tiff_err)?;
    let interleaved = to_f32(decoded).ok_or_else(|| raster_error(path, "unsupported sample format"))?;
    let (h, w) = (height as usize, width as usize);
    let mut pixels = vec![0.0f32; bands * h * w];
    for (i, px) in interleaved.chunks_exact(bands).enumerate() {
        for (b, &v) in px.iter().enumerate() {
            pixels[b * h * w + i] = v;
        }
    }
    let mut mosaic = RasterMosaic::new(modality, sx, origin, bands, h, w, pixels)
        .map_err(|e| raster_error(path, e.to_string()))?;
    mosaic.mask_nodata(nodata);
    Ok(mosaic)
}

fn write_geo_tags<W: std::io::Write + std::io::Seek, K: TiffKind>(
    dir: &mut DirectoryEncoder<'_, W, K>,
    mosaic: &RasterMosaic,
    nodata: Option<f64>,
) -> tiff::TiffResult<()> {
    let res = mosaic.resolution_m;
    dir.write_tag(Tag::ModelPixelScaleTag, &[res, res, 0.0][..])?;
    dir.write_tag(
        Tag::ModelTiepointTag,
        &[0.0, 0.0, 0.0, mosaic.origin.0, mosaic.origin.1, 0.0][..],
    )?;
    // GeoKey directory: projected model, pixel-is-area; CRS left to the caller.
    dir.write_tag(
        Tag::GeoKeyDirectoryTag,
        &[1u16, 1, 0, 2, 1024, 0, 1, 1, 1025, 0, 1, 1][..],
    )?;
    if let Some(nd) = nodata {
        dir.write_tag(Tag::GdalNodata, format!("{nd}").as_str())?;
    }
    Ok(())
}

/// Writes a mosaic as a 32-bit float GeoTIFF with pixel-scale and tie-point tags.
pub fn write_geotiff(path: &Path, mosaic: &RasterMosaic, nodata: Option<f64>) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let tiff_err = |e: tiff::TiffError| raster_error(path, e.to_string());
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(tiff_err)?;
    let (w, h) = (mosaic.width as u32, mosaic.height as u32);
    match mosaic.bands {
        1 => {
            let mut image = encoder.new_image::<Gray32Float>(w, h).map_err(tiff_err)?;
            write_geo_tags(image.encoder(), mosaic, nodata).map_err(tiff_err)?;
            image.write_data(&mosaic.pixels).map_err(tiff_err)?;
        }
        3 => {
            let plane = mosaic.height * mosaic.width;
            let mut interleaved = Vec::with_capacity(mosaic.pixels.len());
            for i in 0..plane {
                for b in 0..3 {
                    interleaved.push(mosaic.pixels[b * plane + i]);
                }
            }
            let mut image = encoder.new_image::<RGB32Float>(w, h).map_err(tiff_err)?;
            write_geo_tags(image.encoder(), mosaic, nodata).map_err(tiff_err)?;
            image.write_data(&interleaved).map_err(tiff_err)?;
        }
        n => return Err(raster_error(path, format!("cannot write {n}-band raster"))),
    }
    Ok(())
}
