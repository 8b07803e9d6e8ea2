use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Axis};

use super::conv::ConvGeometry;
use crate::error::{contract, Result};

fn check_finite<'a>(what: &str, mut values: impl Iterator<Item = &'a f32>) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return contract(format!("{what} contains non-finite values"));
    }
    Ok(())
}

/// A single-channel image, normalized luma in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    data: Array2<f32>,
}

impl Plane {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.is_empty() {
            return contract("plane must be at least 1×1");
        }
        check_finite("plane", data.iter())?;
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height.max(1), width.max(1))),
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f32) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    /// Luma bytes scaled by 1/255.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width {
            return contract(format!("{} bytes for a {height}×{width} plane", bytes.len()));
        }
        let v = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(Array2::from_shape_vec((height, width), v).expect("checked length"))
    }

    /// Round to 8-bit with saturation.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Plane> {
        if top + height > self.height() || left + width > self.width() || height == 0 || width == 0 {
            return contract(format!(
                "crop {height}×{width} at ({top}, {left}) exceeds {}×{} plane",
                self.height(),
                self.width()
            ));
        }
        Ok(Plane {
            data: self
                .data
                .slice(ndarray::s![top..top + height, left..left + width])
                .to_owned(),
        })
    }

    pub fn to_map(&self) -> FeatureMap {
        FeatureMap {
            data: self.data.clone().insert_axis(Axis(0)),
        }
    }
}

/// A `C × H × W` stack of feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f32>,
}

impl FeatureMap {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.is_empty() {
            return contract("feature map must be non-empty");
        }
        check_finite("feature map", data.iter())?;
        Ok(Self { data })
    }

    pub fn stack(planes: &[Plane]) -> Result<Self> {
        let views: Vec<_> = planes.iter().map(|p| p.data.view().insert_axis(Axis(0))).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| crate::Error::Contract(format!("cannot stack planes: {e}")))?;
        Self::new(data)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> Result<Plane> {
        if c >= self.channels() {
            return contract(format!("channel {c} of {}", self.channels()));
        }
        Ok(Plane {
            data: self.data.index_axis(Axis(0), c).to_owned(),
        })
    }
}

/// Dense per-pixel motion in pixels; sampling position is `(y + dy, x + dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub dx: Array2<f32>,
    pub dy: Array2<f32>,
}

impl FlowField {
    pub fn new(dx: Array2<f32>, dy: Array2<f32>) -> Result<Self> {
        if dx.dim() != dy.dim() {
            return contract(format!("flow components {:?} vs {:?}", dx.dim(), dy.dim()));
        }
        check_finite("flow", dx.iter().chain(dy.iter()))?;
        Ok(Self { dx, dy })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        Self {
            dx: Array2::from_elem((height, width), dx),
            dy: Array2::from_elem((height, width), dy),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.dx.dim()
    }

    /// `2 × H × W` with channel 0 = dx, channel 1 = dy.
    pub fn to_array(&self) -> Array3<f32> {
        ndarray::stack(Axis(0), &[self.dx.view(), self.dy.view()]).expect("same shape")
    }

    pub fn from_array(a: ArrayView3<f32>) -> Result<Self> {
        if a.dim().0 != 2 {
            return contract(format!("flow array needs 2 channels, got {}", a.dim().0));
        }
        Self::new(a.index_axis(Axis(0), 0).to_owned(), a.index_axis(Axis(0), 1).to_owned())
    }

    pub fn max_magnitude(&self) -> f32 {
        self.dx
            .iter()
            .zip(self.dy.iter())
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f32::max)
    }
}

/// Deformable-convolution tap displacements: `2K × H × W`, ordered
/// `(Δy₁, Δx₁, …, Δy_K, Δx_K)` over the row-major kernel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    offsets: Array3<f32>,
}

impl OffsetField {
    pub fn new(offsets: Array3<f32>) -> Result<Self> {
        if offsets.dim().0 == 0 || offsets.dim().0 % 2 != 0 {
            return contract(format!("offset field needs 2K channels, got {}", offsets.dim().0));
        }
        check_finite("offset field", offsets.iter())?;
        Ok(Self { offsets })
    }

    pub fn zeros(taps: usize, height: usize, width: usize) -> Self {
        Self::uniform(taps, height, width, 0.0, 0.0)
    }

    /// Every tap displaced by the same `(dy, dx)`.
    pub fn uniform(taps: usize, height: usize, width: usize, dy: f32, dx: f32) -> Self {
        Self {
            offsets: Array3::from_shape_fn((2 * taps, height, width), |(c, _, _)| if c % 2 == 0 { dy } else { dx }),
        }
    }

    pub fn taps(&self) -> usize {
        self.offsets.dim().0 / 2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.offsets
    }
}

/// Weights and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub weights: Array4<f32>,
    pub bias: Array1<f32>,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(weights: Array4<f32>, bias: Array1<f32>, dilation: usize, stride: usize) -> Result<Self> {
        let (o, _, kh, kw) = weights.dim();
        if kh != kw || kh % 2 == 0 {
            return contract(format!("kernel must be odd and square, got {kh}×{kw}"));
        }
        if bias.len() != o {
            return contract(format!("bias has {} entries for {o} outputs", bias.len()));
        }
        if dilation == 0 || stride == 0 {
            return contract("dilation and stride must be positive");
        }
        check_finite("conv weights", weights.iter().chain(bias.iter()))?;
        Ok(Self {
            weights,
            bias,
            dilation,
            stride,
        })
    }

    /// Centre tap 1 on the diagonal, zero elsewhere.
    pub fn identity(channels: usize, kernel: usize, dilation: usize) -> Self {
        let mut w = Array4::zeros((channels, channels, kernel, kernel));
        for c in 0..channels {
            w[[c, c, kernel / 2, kernel / 2]] = 1.0;
        }
        Self {
            weights: w,
            bias: Array1::zeros(channels),
            dilation,
            stride: 1,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.dim().2
    }

    pub fn receptive_field(&self) -> usize {
        self.geometry().receptive_field()
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::same(self.kernel_size(), self.dilation, self.stride)
    }
}
