//! Built-in test objects. All are binary transmittances centered on the
//! grid and kept inside its central half.

use crate::error::{self, Result};
use crate::grid::{Grid2D, RealImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinObject {
    /// Stroked "2", 30 x 20 px with 4 px strokes on a 64 grid, scaled with
    /// the grid. Not centrosymmetric.
    Letter,
    /// Two single pixels on the center row, `separation` pixels apart.
    TwoPoints { separation: usize },
    Rectangle { width: usize, height: usize },
    /// Two 3 x 16 px vertical slits, 8 px apart edge to edge, on a 64 grid.
    DoubleSlit,
}

impl BuiltinObject {
    /// Parses `letter`, `two-points(6)`, `rectangle(12,8)` and `double-slit`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return error::config(format!("malformed object '{s}'")),
            None => (s, None),
        };
        let nums = |a: Option<&str>| -> Result<Vec<usize>> {
            a.unwrap_or("")
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<usize>().map_err(|e| crate::Error::Config(format!("object '{s}': {e}"))))
                .collect()
        };
        match (name.trim(), nums(args)?.as_slice()) {
            ("letter", []) => Ok(Self::Letter),
            ("double-slit", []) => Ok(Self::DoubleSlit),
            ("two-points", [sep]) => Ok(Self::TwoPoints { separation: *sep }),
            ("rectangle", [w, h]) => Ok(Self::Rectangle { width: *w, height: *h }),
            _ => error::config(format!("unknown object '{s}'")),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Letter => "letter".into(),
            Self::DoubleSlit => "double-slit".into(),
            Self::TwoPoints { separation } => format!("two-points({separation})"),
            Self::Rectangle { width, height } => format!("rectangle({width},{height})"),
        }
    }

    pub fn render(&self, grid: Grid2D) -> Result<RealImage> {
        let img = match *self {
            Self::Letter => letter(grid),
            Self::DoubleSlit => double_slit(grid),
            Self::TwoPoints { separation } => two_points(grid, separation)?,
            Self::Rectangle { width, height } => rectangle(grid, width, height)?,
        };
        crate::forward::check_object_support(&img)?;
        Ok(img)
    }
}

fn scaled(v: usize, n: usize) -> usize {
    ((v * n) as f64 / 64.0).round().max(1.0) as usize
}

fn paint(img: &mut RealImage, x0: usize, y0: usize, w: usize, h: usize) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            img.set(x, y, 1.0);
        }
    }
}

pub fn letter(grid: Grid2D) -> RealImage {
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = scaled(30, ny);
    let w = scaled(20, nx);
    let t = scaled(4, nx.min(ny));
    let x0 = nx / 2 - w / 2;
    let y0 = ny / 2 - h / 2;
    let mid = y0 + (h - t) / 2;
    let mut img = RealImage::zeros(grid);
    // The top bar stops short on the left, where a printed 2 curls.
    paint(&mut img, x0 + t, y0, w - t, t);
    paint(&mut img, x0, y0 + t, t, t);
    paint(&mut img, x0 + w - t, y0, t, mid + t - y0);
    paint(&mut img, x0, mid, w, t);
    paint(&mut img, x0, mid, t, y0 + h - mid);
    paint(&mut img, x0, y0 + h - t, w, t);
    img
}

pub fn two_points(grid: Grid2D, separation: usize) -> Result<RealImage> {
    if separation == 0 || separation >= grid.nx() / 2 {
        return error::config(format!("two-point separation {separation} px must lie in [1, {})", grid.nx() / 2));
    }
    let mut img = RealImage::zeros(grid);
    let x0 = grid.nx() / 2 - separation / 2;
    img.set(x0, grid.ny() / 2, 1.0);
    img.set(x0 + separation, grid.ny() / 2, 1.0);
    Ok(img)
}

pub fn rectangle(grid: Grid2D, width: usize, height: usize) -> Result<RealImage> {
    if width == 0 || height == 0 || width > grid.nx() / 2 || height > grid.ny() / 2 {
        return error::config(format!("rectangle {width}x{height} does not fit the central half"));
    }
    let mut img = RealImage::zeros(grid);
    paint(&mut img, grid.nx() / 2 - width / 2, grid.ny() / 2 - height / 2, width, height);
    Ok(img)
}

pub fn double_slit(grid: Grid2D) -> RealImage {
    let (nx, ny) = (grid.nx(), grid.ny());
    let w = scaled(3, nx);
    let gap = scaled(8, nx);
    let h = scaled(16, ny);
    let x0 = nx / 2 - (2 * w + gap) / 2;
    let y0 = ny / 2 - h / 2;
    let mut img = RealImage::zeros(grid);
    paint(&mut img, x0, y0, w, h);
    paint(&mut img, x0 + w + gap, y0, w, h);
    img
}
