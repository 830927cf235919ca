//! Minimal 8-bit RGB raster used throughout the pipeline.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("pixel buffer of length {len} does not match {height}x{width}x3")]
    Shape {
        height: usize,
        width: usize,
        len: usize,
    },
}

/// Row-major, channel-interleaved RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != height * width * 3 {
            return Err(RasterError::Shape {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the `height`x`width` window whose top-left corner is `(row, col)`.
    ///
    /// Panics if the window leaves the raster.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Raster {
        assert!(row + height <= self.height && col + width <= self.width);
        let mut data = Vec::with_capacity(height * width * 3);
        for r in row..row + height {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Raster {
            height,
            width,
            data,
        }
    }

    /// Luma (BT.601 weights) on the 0-255 scale.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Planar float copy, one plane per channel, values in 0-255.
    pub fn to_planes(&self) -> [Vec<f32>; 3] {
        let n = self.height * self.width;
        let mut planes = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            planes[0][i] = p[0] as f32;
            planes[1][i] = p[1] as f32;
            planes[2][i] = p[2] as f32;
        }
        planes
    }

    /// Inverse of [`Raster::to_planes`]; values are rounded and clamped to 0-255.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f32>; 3]) -> Raster {
        let n = height * width;
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            for plane in planes {
                data.push(plane[i].round().clamp(0.0, 255.0) as u8);
            }
        }
        Raster {
            height,
            width,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Raster, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = img.into_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Raster {
            height: h as usize,
            width: w as usize,
            data: rgb.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| RasterError::Encode {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_copies_window() {
        let mut r = Raster::new(4, 5);
        r.put(2, 3, [1, 2, 3]);
        let c = r.crop(1, 2, 2, 2);
        assert_eq!(c.height(), 2);
        assert_eq!(c.get(1, 1), [1, 2, 3]);
        assert_eq!(c.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn planes_round_trip() {
        let mut r = Raster::new(3, 3);
        r.put(0, 1, [10, 200, 255]);
        let planes = r.to_planes();
        assert_eq!(Raster::from_planes(3, 3, &planes), r);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut r = Raster::filled(6, 7, [9, 8, 7]);
        r.put(5, 6, [255, 0, 128]);
        r.save_png(&path).unwrap();
        assert_eq!(Raster::load(&path).unwrap(), r);
    }
}
