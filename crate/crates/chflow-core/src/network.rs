//! Transportation network: links with BPR travel-time functions, OD pairs,
//! explicit route sets, and the derived flow/cost maps.
//!
//! Routes are stored grouped by OD pair so that every per-OD object (demand
//! constraint, projection block, Logit block) can address a contiguous slice
//! of the global route-flow vector.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A directed link with BPR parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: u32,
    /// Free-flow travel time (t^0 > 0).
    pub free_flow_time: f64,
    /// Practical capacity (V > 0).
    pub capacity: f64,
}

/// A route: an ordered sequence of links connecting one OD pair.
#[derive(Debug, Clone)]
pub struct Route {
    /// 1-based identifier, assigned in construction order.
    pub id: u32,
    pub od_id: u32,
    /// Link ids as given by the caller.
    pub links: Vec<u32>,
    /// Positions of those links in `Network::links`.
    link_idx: Vec<usize>,
}

impl Route {
    pub fn link_indices(&self) -> &[usize] {
        &self.link_idx
    }
}

/// An origin-destination pair with its demand and route slice.
#[derive(Debug, Clone)]
pub struct OdPair {
    pub id: u32,
    pub demand: f64,
    route_range: Range<usize>,
}

impl OdPair {
    /// Global route indices belonging to this OD pair.
    pub fn route_range(&self) -> Range<usize> {
        self.route_range.clone()
    }
}

/// Coefficients of the polynomial link travel-time function
/// `t(v) = t0 * (1 + coefficient * (v / V)^exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprParams {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for BprParams {
    fn default() -> Self {
        BprParams {
            coefficient: 0.15,
            exponent: 4.0,
        }
    }
}

/// Route specification used when building a network: the OD id, its demand
/// and one link-id list per route.
#[derive(Debug, Clone)]
pub struct OdSpec {
    pub id: u32,
    pub demand: f64,
    pub routes: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    links: Vec<Link>,
    od_pairs: Vec<OdPair>,
    routes: Vec<Route>,
    bpr: BprParams,
}

impl Network {
    pub fn new(links: Vec<Link>, ods: Vec<OdSpec>, bpr: BprParams) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidNetwork("no links".into()));
        }
        if ods.is_empty() {
            return Err(Error::InvalidNetwork("no OD pairs".into()));
        }
        for l in &links {
            if !(l.free_flow_time > 0.0) || !(l.capacity > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "link {} must have positive free-flow time and capacity",
                    l.id
                )));
            }
        }
        if !(bpr.coefficient > 0.0) || !(bpr.exponent >= 1.0) {
            return Err(Error::InvalidNetwork(
                "BPR coefficient must be positive and exponent at least 1".into(),
            ));
        }
        let mut seen = std::collections::HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if seen.insert(l.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate link id {}", l.id)));
            }
        }

        let mut routes = Vec::new();
        let mut od_pairs = Vec::new();
        let mut next_route_id = 1u32;
        for od in &ods {
            if !(od.demand > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "OD pair {} must have positive demand",
                    od.id
                )));
            }
            if od.routes.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "OD pair {} has no routes",
                    od.id
                )));
            }
            let start = routes.len();
            for link_ids in &od.routes {
                if link_ids.is_empty() {
                    return Err(Error::InvalidNetwork(format!(
                        "route {} is empty",
                        next_route_id
                    )));
                }
                let mut link_idx = Vec::with_capacity(link_ids.len());
                for lid in link_ids {
                    match seen.get(lid) {
                        Some(&i) => link_idx.push(i),
                        None => {
                            return Err(Error::InvalidNetwork(format!(
                                "route {} references unknown link {}",
                                next_route_id, lid
                            )))
                        }
                    }
                }
                routes.push(Route {
                    id: next_route_id,
                    od_id: od.id,
                    links: link_ids.clone(),
                    link_idx,
                });
                next_route_id += 1;
            }
            od_pairs.push(OdPair {
                id: od.id,
                demand: od.demand,
                route_range: start..routes.len(),
            });
        }

        Ok(Network {
            links,
            od_pairs,
            routes,
            bpr,
        })
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    /// Total route count over all OD pairs.
    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn num_ods(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn bpr(&self) -> BprParams {
        self.bpr
    }

    pub fn demands(&self) -> Vec<f64> {
        self.od_pairs.iter().map(|od| od.demand).collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.od_pairs.iter().map(|od| od.demand).sum()
    }

    /// Route index ranges per OD pair, in OD order.
    pub fn od_route_ranges(&self) -> Vec<Range<usize>> {
        self.od_pairs.iter().map(|od| od.route_range()).collect()
    }

    /// The OD pair a global route index belongs to.
    pub fn od_of_route(&self, route: usize) -> usize {
        self.od_pairs
            .iter()
            .position(|od| od.route_range().contains(&route))
            .expect("route index out of range")
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_routes() {
            return Err(Error::DimensionMismatch {
                expected: self.num_routes(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Link flows induced by an aggregate route-flow vector: `v = Δ x`.
    pub fn link_flows(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut v = vec![0.0; self.links.len()];
        for (r, route) in self.routes.iter().enumerate() {
            for &a in &route.link_idx {
                v[a] += x[r];
            }
        }
        Ok(v)
    }

    /// BPR travel time of one link at flow `v`.
    pub fn link_time(&self, link: usize, v: f64) -> f64 {
        let l = &self.links[link];
        l.free_flow_time * (1.0 + self.bpr.coefficient * (v / l.capacity).powf(self.bpr.exponent))
    }

    /// Derivative of the BPR travel time of one link at flow `v`.
    pub fn link_time_derivative(&self, link: usize, v: f64) -> f64 {
        let l = &self.links[link];
        l.free_flow_time * self.bpr.coefficient * self.bpr.exponent
            * (v / l.capacity).powf(self.bpr.exponent - 1.0)
            / l.capacity
    }

    /// Travel times of all links at the given link flows.
    pub fn link_times(&self, v: &[f64]) -> Vec<f64> {
        (0..self.links.len()).map(|a| self.link_time(a, v[a])).collect()
    }

    /// Route costs as the incidence transpose applied to link times: `c = Δᵀ t`.
    pub fn route_costs_from_link_times(&self, t: &[f64]) -> Vec<f64> {
        self.routes
            .iter()
            .map(|route| route.link_idx.iter().map(|&a| t[a]).sum())
            .collect()
    }

    /// Route costs under an aggregate route-flow vector, additive over links.
    pub fn route_costs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.link_flows(x)?;
        let t = self.link_times(&v);
        Ok(self.route_costs_from_link_times(&t))
    }

    /// Jacobian of the route-cost map: `D = Δᵀ diag(t'_a) Δ`.
    ///
    /// Symmetric and positive semidefinite for increasing link time functions.
    pub fn cost_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.link_flows(x)?;
        let dt: Vec<f64> = (0..self.links.len())
            .map(|a| self.link_time_derivative(a, v[a]))
            .collect();
        let r = self.num_routes();
        let mut d = DMatrix::zeros(r, r);
        // Accumulate per link over the routes using it.
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); self.links.len()];
        for (ri, route) in self.routes.iter().enumerate() {
            for &a in &route.link_idx {
                users[a].push(ri);
            }
        }
        for (a, rs) in users.iter().enumerate() {
            let w = dt[a];
            for &i in rs {
                for &j in rs {
                    d[(i, j)] += w;
                }
            }
        }
        Ok(d)
    }

    /// Aggregate flow splitting each OD demand equally over its routes.
    pub fn uniform_flow(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_routes()];
        for od in &self.od_pairs {
            let n = od.route_range().len() as f64;
            for r in od.route_range() {
                x[r] = od.demand / n;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_route_net() -> Network {
        // One OD, two disjoint single-link routes.
        Network::new(
            vec![
                Link { id: 1, free_flow_time: 1.0, capacity: 1.0 },
                Link { id: 2, free_flow_time: 2.0, capacity: 1.0 },
            ],
            vec![OdSpec { id: 1, demand: 3.0, routes: vec![vec![1], vec![2]] }],
            BprParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_flow_gives_zero_link_flows_and_free_flow_costs() {
        let net = two_route_net();
        let v = net.link_flows(&[0.0, 0.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        let c = net.route_costs(&[0.0, 0.0]).unwrap();
        assert_eq!(c, vec![1.0, 2.0]);
    }

    #[test]
    fn single_route_flow_hits_its_links_only() {
        let net = Network::new(
            vec![
                Link { id: 1, free_flow_time: 1.0, capacity: 10.0 },
                Link { id: 2, free_flow_time: 1.0, capacity: 10.0 },
                Link { id: 3, free_flow_time: 1.0, capacity: 10.0 },
            ],
            vec![OdSpec { id: 1, demand: 5.0, routes: vec![vec![1, 3], vec![2]] }],
            BprParams::default(),
        )
        .unwrap();
        let v = net.link_flows(&[5.0, 0.0]).unwrap();
        assert_eq!(v, vec![5.0, 0.0, 5.0]);
    }

    #[test]
    fn bpr_at_capacity_is_fifteen_percent_over_free_flow() {
        let net = two_route_net();
        let c = net.route_costs(&[1.0, 0.0]).unwrap();
        assert!((c[0] - 1.15).abs() < 1e-15);
        assert_eq!(c[1], 2.0);
    }

    #[test]
    fn two_route_toy_costs_match_scalar_bpr() {
        let net = two_route_net();
        let c = net.route_costs(&[2.0, 1.0]).unwrap();
        let bpr = |t0: f64, v: f64| t0 * (1.0 + 0.15 * v.powi(4));
        assert!((c[0] - bpr(1.0, 2.0)).abs() < 1e-12);
        assert!((c[1] - bpr(2.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cost_jacobian_is_zero_at_origin_and_symmetric() {
        let net = two_route_net();
        let d = net.cost_jacobian(&[0.0, 0.0]).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
        let d = net.cost_jacobian(&[2.0, 1.0]).unwrap();
        assert_eq!(d[(0, 1)], d[(1, 0)]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = two_route_net();
        assert!(matches!(
            net.link_flows(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn route_lists_must_reference_known_links() {
        let err = Network::new(
            vec![Link { id: 1, free_flow_time: 1.0, capacity: 1.0 }],
            vec![OdSpec { id: 1, demand: 1.0, routes: vec![vec![7]] }],
            BprParams::default(),
        );
        assert!(err.is_err());
    }
}
