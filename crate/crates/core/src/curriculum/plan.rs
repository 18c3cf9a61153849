use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::Tile;
use crate::uncertainty::{tile_uncertainty, UncertaintyMap};

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    pub d: usize,
    pub sigma: f64,
    /// Total stages including the initial (non-curriculum) stage.
    pub max_stages: usize,
    pub min_step: usize,
    /// Minimum validation UA gain required to run another stage.
    pub stop_epsilon: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            d: 160,
            sigma: 0.4,
            max_stages: 4,
            min_step: 1,
            stop_epsilon: 0.001,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.min_step < 1 {
            return Err(Error::Config("min_step must be >= 1".into()));
        }
        if self.max_stages < 1 {
            return Err(Error::Config("max_stages must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("tile size must be positive".into()));
        }
        if self.min_step > self.d {
            return Err(Error::Config("min_step exceeds tile size".into()));
        }
        Ok(())
    }
}

/// Pixel advance for a tile with mean normalized uncertainty `h`:
/// `round(d * exp(-h^2 / (2 sigma^2)))`, rounded half-up and clamped to
/// `[min_step, d]`.
pub fn step_size(h: f64, d: usize, sigma: f64, min_step: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::Config(format!("tile uncertainty {h} outside [0, 1]")));
    }
    let raw = d as f64 * (-(h * h) / (2.0 * sigma * sigma)).exp();
    let step = (raw + 0.5).floor() as usize;
    Ok(step.clamp(min_step, d.max(min_step)))
}

/// Resampled tile positions for one image and stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumPlan {
    pub tiles: Vec<Tile>,
    pub stage_index: usize,
    pub source_image_id: String,
}

impl CurriculumPlan {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "PLAN1 image={} stage={} tiles={}\n",
            self.source_image_id,
            self.stage_index,
            self.tiles.len()
        );
        for t in &self.tiles {
            let _ = writeln!(s, "{} {} {}", t.x0, t.y0, t.d);
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty plan")?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("PLAN1") {
            return Err("missing PLAN1 magic".into());
        }
        let mut id = None;
        let mut stage = None;
        let mut count = None;
        for f in fields {
            match f.split_once('=') {
                Some(("image", v)) => id = Some(v.to_string()),
                Some(("stage", v)) => stage = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
                Some(("tiles", v)) => count = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
                _ => return Err(format!("unexpected header field {f:?}")),
            }
        }
        let mut tiles = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|x| x.parse::<usize>().map_err(|e| format!("{line:?}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if v.len() != 3 {
                return Err(format!("expected `x0 y0 d`, got {line:?}"));
            }
            tiles.push(Tile::new(v[0], v[1], v[2]));
        }
        let count = count.ok_or("missing tiles= in header")?;
        if count != tiles.len() {
            return Err(format!("header declares {count} tiles, found {}", tiles.len()));
        }
        Ok(Self {
            tiles,
            stage_index: stage.ok_or("missing stage= in header")?,
            source_image_id: id.ok_or("missing image= in header")?,
        })
    }
}

/// Scans the map from the top-left corner. Within a row the horizontal
/// advance is the step for the current tile's uncertainty; the advance to
/// the next row is the step for the mean uncertainty of the finished row.
/// The last tile of every row and the last row sit flush with the edge.
pub fn build_plan(
    umap: &UncertaintyMap,
    cfg: &CurriculumConfig,
    image_id: &str,
    stage_index: usize,
) -> Result<CurriculumPlan> {
    cfg.validate()?;
    let (w, h) = umap.shape();
    let d = cfg.d;
    if d > w || d > h {
        return Err(Error::Geometry(format!(
            "uncertainty map {w}x{h} smaller than tile size {d}"
        )));
    }
    let (x_last, y_last) = (w - d, h - d);
    let mut tiles = Vec::new();
    let mut y = 0;
    loop {
        let mut x = 0;
        let mut row_sum = 0.0;
        let mut row_n = 0usize;
        loop {
            let tile = Tile::new(x, y, d);
            let hs = tile_uncertainty(umap, tile)?;
            tiles.push(tile);
            row_sum += hs;
            row_n += 1;
            if x == x_last {
                break;
            }
            x = (x + step_size(hs, d, cfg.sigma, cfg.min_step)?).min(x_last);
        }
        if y == y_last {
            break;
        }
        let row_mean = (row_sum / row_n as f64).clamp(0.0, 1.0);
        y = (y + step_size(row_mean, d, cfg.sigma, cfg.min_step)?).min(y_last);
    }
    Ok(CurriculumPlan {
        tiles,
        stage_index,
        source_image_id: image_id.to_string(),
    })
}
