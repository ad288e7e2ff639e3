//! Random visibility network.
//!
//! Agents are numbered with market makers first, then value investors, then
//! trend investors. Every edge touches at least one market maker, and every
//! investor is linked to at least one market maker.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MarketMaker,
    ValueInvestor,
    TrendInvestor,
}

impl Role {
    pub fn code(self) -> &'static str {
        match self {
            Role::MarketMaker => "MM",
            Role::ValueInvestor => "VI",
            Role::TrendInvestor => "TI",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MM" => Ok(Role::MarketMaker),
            "VI" => Ok(Role::ValueInvestor),
            "TI" => Ok(Role::TrendInvestor),
            other => Err(Error::Parse(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId {
    pub index: usize,
    pub role: Role,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role.code(), self.index)
    }
}

/// Undirected visibility graph over all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    roles: Vec<Role>,
    present: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
    n_market_makers: usize,
    link_probability: f64,
}

impl NetworkTopology {
    /// Number of candidate edges: every unordered (agent, market maker) pair
    /// without self pairs.
    pub fn admissible_pairs(n_mm: usize, n_vi: usize, n_ti: usize) -> usize {
        n_mm * n_mm.saturating_sub(1) / 2 + n_mm * (n_vi + n_ti)
    }

    /// Draws every admissible edge independently with probability `p`, then
    /// links each investor left without a market maker to one chosen uniformly.
    pub fn generate<R: Rng + ?Sized>(n_mm: usize, n_vi: usize, n_ti: usize, p: f64, rng: &mut R) -> Result<Self> {
        if n_mm == 0 {
            return Err(Error::config("n_dealers", "at least one market maker is required"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config("prob_of_link", format!("{p} is not a probability")));
        }
        let n = n_mm + n_vi + n_ti;
        let mut roles = vec![Role::MarketMaker; n_mm];
        roles.extend(std::iter::repeat_n(Role::ValueInvestor, n_vi));
        roles.extend(std::iter::repeat_n(Role::TrendInvestor, n_ti));

        let mut net = NetworkTopology {
            roles,
            present: vec![true; n],
            adjacency: vec![Vec::new(); n],
            n_market_makers: n_mm,
            link_probability: p,
        };

        // Market makers occupy the lowest indices, so pairing each market maker
        // with every higher index enumerates each admissible pair exactly once.
        for mm in 0..n_mm {
            for other in (mm + 1)..n {
                if rng.random_bool(p) {
                    net.link(mm, other);
                }
            }
        }
        for agent in n_mm..n {
            if net.adjacency[agent].is_empty() {
                let mm = rng.random_range(0..n_mm);
                net.link(agent, mm);
            }
        }
        for adj in &mut net.adjacency {
            adj.sort_unstable();
        }
        Ok(net)
    }

    /// Builds a network from an explicit edge list. Edges are validated
    /// against the structural invariants.
    pub fn from_edges(roles: Vec<Role>, edges: &[(usize, usize)], p: f64) -> Result<Self> {
        let n = roles.len();
        let n_mm = roles.iter().take_while(|r| **r == Role::MarketMaker).count();
        if roles[n_mm..].contains(&Role::MarketMaker) {
            return Err(Error::Structure("market makers must occupy the lowest indices".into()));
        }
        let mut net = NetworkTopology {
            roles,
            present: vec![true; n],
            adjacency: vec![Vec::new(); n],
            n_market_makers: n_mm,
            link_probability: p,
        };
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::UnknownAgent(u.max(v)));
            }
            if u == v {
                return Err(Error::Structure(format!("self-loop on {u}")));
            }
            if !net.is_market_maker(u) && !net.is_market_maker(v) {
                return Err(Error::Structure(format!("edge {u}-{v} has no market maker")));
            }
            if net.adjacency[u].contains(&v) {
                return Err(Error::Structure(format!("duplicate edge {u}-{v}")));
            }
            net.link(u, v);
        }
        for adj in &mut net.adjacency {
            adj.sort_unstable();
        }
        net.validate()?;
        Ok(net)
    }

    fn link(&mut self, u: usize, v: usize) {
        self.adjacency[u].push(v);
        self.adjacency[v].push(u);
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn n_market_makers(&self) -> usize {
        self.n_market_makers
    }

    pub fn link_probability(&self) -> f64 {
        self.link_probability
    }

    pub fn role(&self, index: usize) -> Option<Role> {
        self.roles.get(index).copied()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn agent(&self, index: usize) -> Result<AgentId> {
        self.role(index)
            .map(|role| AgentId { index, role })
            .ok_or(Error::UnknownAgent(index))
    }

    pub fn is_market_maker(&self, index: usize) -> bool {
        index < self.n_market_makers
    }

    pub fn is_present(&self, index: usize) -> bool {
        self.present.get(index).copied().unwrap_or(false)
    }

    /// Sorted neighbor indices of a present agent.
    pub fn neighbors(&self, index: usize) -> Result<&[usize]> {
        if !self.is_present(index) {
            return Err(Error::UnknownAgent(index));
        }
        Ok(&self.adjacency[index])
    }

    /// Neighbors that are market makers. Because market makers hold the lowest
    /// indices this is a prefix of the sorted neighbor list.
    pub fn mm_neighbors(&self, index: usize) -> Result<&[usize]> {
        let adj = self.neighbors(index)?;
        let end = adj.partition_point(|&j| j < self.n_market_makers);
        Ok(&adj[..end])
    }

    /// All edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected components of the subgraph induced on market makers, each
    /// sorted, ordered by smallest member.
    pub fn market_maker_components(&self) -> Vec<Vec<usize>> {
        let n_mm = self.n_market_makers;
        let mut seen = vec![false; n_mm];
        let mut components = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n_mm {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut component = Vec::new();
            while let Some(u) = queue.pop_front() {
                component.push(u);
                for &v in self.adjacency[u].iter().take_while(|&&v| v < n_mm) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            component.sort_unstable();
            components.push(component);
        }
        components
    }

    /// Drops an investor from the network together with all its edges.
    pub fn remove_agent(&mut self, index: usize) -> Result<()> {
        if !self.is_present(index) {
            return Err(Error::UnknownAgent(index));
        }
        if self.is_market_maker(index) {
            return Err(Error::Structure("market makers cannot be removed".into()));
        }
        for v in std::mem::take(&mut self.adjacency[index]) {
            self.adjacency[v].retain(|&u| u != index);
        }
        self.present[index] = false;
        Ok(())
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        for (u, adj) in self.adjacency.iter().enumerate() {
            if !self.present[u] {
                if !adj.is_empty() {
                    return Err(Error::Structure(format!("removed agent {u} still has edges")));
                }
                continue;
            }
            for w in adj.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Structure(format!("duplicate edge {u}-{}", w[0])));
                }
            }
            for &v in adj {
                if v == u {
                    return Err(Error::Structure(format!("self-loop on {u}")));
                }
                if !self.is_market_maker(u) && !self.is_market_maker(v) {
                    return Err(Error::Structure(format!("edge {u}-{v} has no market maker")));
                }
                if !self.adjacency[v].contains(&u) {
                    return Err(Error::Structure(format!("edge {u}-{v} is not symmetric")));
                }
            }
            if !self.is_market_maker(u) && !adj.iter().any(|&v| self.is_market_maker(v)) {
                return Err(Error::Structure(format!("agent {u} has no market maker neighbor")));
            }
        }
        Ok(())
    }

    /// Edge-list text form: a `nodes N` header followed by one `index ROLE`
    /// line per present node, then `edges E` and one `u v` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let present: Vec<usize> = (0..self.len()).filter(|&i| self.present[i]).collect();
        out.push_str(&format!("nodes {}\n", present.len()));
        for i in present {
            out.push_str(&format!("{i} {}\n", self.roles[i].code()));
        }
        let edges = self.edges();
        out.push_str(&format!("edges {}\n", edges.len()));
        for (u, v) in edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    /// Parses the text produced by [`to_edge_list`](Self::to_edge_list).
    /// Indices missing from the node block are treated as removed investors.
    pub fn parse_edge_list(text: &str, p: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n_nodes = parse_header(lines.next(), "nodes")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated node block".into()))?;
            let (i, role) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad node line `{line}`")))?;
            let i: usize = i.parse().map_err(|_| Error::Parse(format!("bad index `{i}`")))?;
            nodes.push((i, role.trim().parse::<Role>()?));
        }
        let n_edges = parse_header(lines.next(), "edges")?;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated edge block".into()))?;
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => return Err(Error::Parse(format!("bad edge line `{line}`"))),
            }
        }

        let n = nodes.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
        let mut roles = vec![Role::ValueInvestor; n];
        let mut present = vec![false; n];
        for (i, role) in nodes {
            roles[i] = role;
            present[i] = true;
        }
        let mut net = Self::from_edges_unchecked(roles, &edges, p)?;
        net.present = present;
        net.validate()?;
        Ok(net)
    }

    fn from_edges_unchecked(roles: Vec<Role>, edges: &[(usize, usize)], p: f64) -> Result<Self> {
        let n = roles.len();
        let n_mm = roles.iter().take_while(|r| **r == Role::MarketMaker).count();
        let mut net = NetworkTopology {
            roles,
            present: vec![true; n],
            adjacency: vec![Vec::new(); n],
            n_market_makers: n_mm,
            link_probability: p,
        };
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::UnknownAgent(u.max(v)));
            }
            net.link(u, v);
        }
        for adj in &mut net.adjacency {
            adj.sort_unstable();
        }
        Ok(net)
    }
}

fn parse_header(line: Option<&str>, keyword: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing `{keyword}` header")))?;
    line.strip_prefix(keyword)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("expected `{keyword} N`, got `{line}`")))
}
