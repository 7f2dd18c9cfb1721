use serde::{Deserialize, Serialize};

use crate::error::{Result, WindError};

/// One observation site on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: u32,
    /// Latitude in degrees north.
    pub lat: f64,
    /// Longitude in degrees east (west is negative).
    pub lon: f64,
}

/// The set of sites the multivariate series is observed at.
///
/// Order of `sites` fixes the coordinate order of every vector and matrix
/// in the library (row/column `i` of a covariance is `sites[i]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteGrid {
    sites: Vec<Site>,
}

impl SiteGrid {
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(WindError::invalid_params("grid must contain at least one site"));
        }
        for s in &sites {
            if !s.lat.is_finite() || !s.lon.is_finite() {
                return Err(WindError::invalid_params(format!(
                    "site {} has non-finite coordinates",
                    s.site_id
                )));
            }
        }
        let mut ids: Vec<u32> = sites.iter().map(|s| s.site_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != sites.len() {
            return Err(WindError::invalid_params("site ids must be unique"));
        }
        Ok(SiteGrid { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &Site {
        &self.sites[i]
    }

    pub fn latitudes(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.lat).collect()
    }

    pub fn longitudes(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.lon).collect()
    }

    /// Distinct latitude values, ascending, with exact-equality grouping.
    pub fn distinct_latitudes(&self) -> Vec<f64> {
        let mut lats: Vec<f64> = self.sites.iter().map(|s| s.lat).collect();
        lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lats.dedup();
        lats
    }

    /// Regular demo grid: `n_lat` latitude lines x `n_lon` longitude columns
    /// over a box similar to the North-East Atlantic study region.
    /// Sites are numbered row by row, south to north, west to east.
    pub fn demo(n_lat: usize, n_lon: usize) -> SiteGrid {
        let mut sites = Vec::with_capacity(n_lat * n_lon);
        let mut id = 1u32;
        for i in 0..n_lat {
            let lat = 48.0
                + if n_lat > 1 {
                    1.5 * i as f64 / (n_lat - 1) as f64
                } else {
                    0.0
                };
            for j in 0..n_lon {
                let lon = -9.0
                    + if n_lon > 1 {
                        2.75 * j as f64 / (n_lon - 1) as f64
                    } else {
                        0.0
                    };
                sites.push(Site { site_id: id, lat, lon });
                id += 1;
            }
        }
        SiteGrid::new(sites).expect("demo grid is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_ids() {
        let sites = vec![
            Site { site_id: 1, lat: 48.0, lon: -9.0 },
            Site { site_id: 1, lat: 48.0, lon: -8.0 },
        ];
        assert!(SiteGrid::new(sites).is_err());
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(SiteGrid::new(vec![]).is_err());
        let sites = vec![Site { site_id: 1, lat: f64::NAN, lon: 0.0 }];
        assert!(SiteGrid::new(sites).is_err());
    }

    #[test]
    fn demo_grid_shape() {
        let g = SiteGrid::demo(3, 6);
        assert_eq!(g.len(), 18);
        assert_eq!(g.distinct_latitudes().len(), 3);
        assert_eq!(g.site(0).site_id, 1);
        assert_eq!(g.site(17).site_id, 18);
    }
}
