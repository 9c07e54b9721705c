use super::SynthError;

/// Channel-major continuous raster `[channels x height x width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, SynthError> {
        if data.len() != channels * height * width {
            return Err(SynthError::Dimension(format!(
                "raster {channels}x{height}x{width} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Applies `f` to every value, e.g. an affine elevation transform.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

/// Per-pixel categorical map with a fixed class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ClassMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self, SynthError> {
        if data.len() != height * width {
            return Err(SynthError::Dimension(format!(
                "class map {height}x{width} cannot hold {} labels",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(SynthError::Dimension(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { classes, height, width, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel fraction of every class.
    pub fn fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.classes];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        let n = self.data.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}
