//! Market-maker quoting, trade pricing and the value-investor and inter-dealer
//! decision rules.
//!
//! Sizes are signed from the market maker's side: a positive size means the
//! market maker buys. A maker quotes
//!
//! ```text
//! price = last_seen + f * b / 2 - a * (inventory + size)
//! ```
//!
//! with `f = +1` when it sells and `f = -1` when it buys, so the skew term is
//! evaluated on the inventory the maker would hold after the trade.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::{AgentId, NetworkTopology, Role};

/// Which side the market maker takes in a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    MakerSells,
    MakerBuys,
}

impl Side {
    pub fn flag(self) -> f64 {
        match self {
            Side::MakerSells => 1.0,
            Side::MakerBuys => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::MakerSells => Side::MakerBuys,
            Side::MakerBuys => Side::MakerSells,
        }
    }

    /// The side implied by a maker-perspective size.
    pub fn of_size(size: f64) -> Side {
        if size > 0.0 {
            Side::MakerBuys
        } else {
            Side::MakerSells
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketMakerState {
    pub last_seen_price: f64,
    pub inventory: f64,
    pub skew_coefficient: f64,
    pub bid_offer: f64,
    mid: f64,
}

impl MarketMakerState {
    pub fn new(price: f64, skew_coefficient: f64, bid_offer: f64) -> Self {
        Self {
            last_seen_price: price,
            inventory: 0.0,
            skew_coefficient,
            bid_offer,
            mid: price,
        }
    }

    /// Transaction price for a trade of `size` units (maker perspective).
    /// A zero size gives the displayed bid or offer.
    pub fn quote_price(&self, side: Side, size: f64) -> f64 {
        self.last_seen_price + side.flag() * self.bid_offer / 2.0 - self.skew_coefficient * (self.inventory + size)
    }

    /// Recomputes the mid from the last seen price and the current inventory.
    pub fn update_mid(&mut self) {
        self.mid = self.last_seen_price - self.skew_coefficient * self.inventory;
    }

    /// Mid as of the last update pass.
    pub fn mid(&self) -> f64 {
        self.mid
    }

    pub fn bid(&self) -> f64 {
        self.mid - self.bid_offer / 2.0
    }

    pub fn offer(&self) -> f64 {
        self.mid + self.bid_offer / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInvestorState {
    pub target: f64,
    pub size_scale: f64,
    pub inventory: f64,
}

impl ValueInvestorState {
    pub fn new(target: f64, size_scale: f64) -> Self {
        Self {
            target,
            size_scale,
            inventory: 0.0,
        }
    }
}

/// One executed trade. `size` is signed from the market maker's side and
/// `flag` is `+1` when the market maker sold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub tick: u64,
    pub buyer: AgentId,
    pub seller: AgentId,
    pub mm: AgentId,
    pub price: f64,
    pub size: f64,
    pub flag: i8,
}

impl Trade {
    /// Builds a trade between `investor` and market maker `mm`. Panics on a
    /// zero size.
    pub fn new(tick: u64, investor: AgentId, mm: AgentId, price: f64, size: f64) -> Self {
        assert!(size != 0.0, "trades must have a nonzero size");
        let (buyer, seller, flag) = if size < 0.0 {
            (investor, mm, 1)
        } else {
            (mm, investor, -1)
        };
        Trade {
            tick,
            buyer,
            seller,
            mm,
            price,
            size,
            flag,
        }
    }

    /// The non-market-maker side of the trade (the initiating dealer for
    /// inter-dealer trades).
    pub fn investor(&self) -> AgentId {
        if self.buyer == self.mm {
            self.seller
        } else {
            self.buyer
        }
    }

    pub const CSV_HEADER: &'static str = "tick,buyer,seller,mm,price,size,flag";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.tick, self.buyer, self.seller, self.mm, self.price, self.size, self.flag
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub mm: usize,
    pub price: f64,
    pub side: Side,
}

/// Most competitive quote among `candidates` for a trade of `size` on `side`.
/// Exact ties are broken uniformly at random.
pub fn best_quote_among<R: Rng + ?Sized>(
    candidates: &[usize],
    mms: &[MarketMakerState],
    side: Side,
    size: f64,
    rng: &mut R,
) -> Option<Quote> {
    // Lower is better when the maker sells, higher when it buys.
    let better = |a: f64, b: f64| match side {
        Side::MakerSells => a < b,
        Side::MakerBuys => a > b,
    };
    let mut best: Option<f64> = None;
    let mut tied: Vec<usize> = Vec::new();
    for &mm in candidates {
        let price = mms[mm].quote_price(side, size);
        match best {
            Some(b) if better(b, price) => {}
            Some(b) if b == price => tied.push(mm),
            _ => {
                best = Some(price);
                tied.clear();
                tied.push(mm);
            }
        }
    }
    let price = best?;
    let mm = if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    };
    Some(Quote { mm, price, side })
}

/// Best quote across the market-maker neighbors of `agent`.
pub fn best_quote<R: Rng + ?Sized>(
    agent: usize,
    net: &NetworkTopology,
    mms: &[MarketMakerState],
    side: Side,
    size: f64,
    rng: &mut R,
) -> Result<Quote> {
    let neighbors = net.mm_neighbors(agent)?;
    best_quote_among(neighbors, mms, side, size, rng)
        .ok_or_else(|| Error::Structure(format!("agent {agent} has no market maker neighbor")))
}

/// Price and size agreed between a value investor and one market maker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueQuote {
    pub price: f64,
    pub size: f64,
    pub clamped: bool,
}

/// Joint solution of the maker's pricing rule and the investor's sizing rule
/// `size = (price - target) / scale`, clamped to `cap` and repriced when the
/// unconstrained size exceeds it.
pub fn solve_value_trade(vi: &ValueInvestorState, mm: &MarketMakerState, side: Side, cap: f64) -> ValueQuote {
    let a = mm.skew_coefficient;
    let sigma = vi.size_scale;
    let price = (mm.last_seen_price + side.flag() * mm.bid_offer / 2.0 - a * (mm.inventory - vi.target / sigma))
        / (1.0 + a / sigma);
    let size = (price - vi.target) / sigma;
    if size.abs() > cap {
        let size = cap.copysign(size);
        ValueQuote {
            price: mm.quote_price(side, size),
            size,
            clamped: true,
        }
    } else {
        ValueQuote {
            price,
            size,
            clamped: false,
        }
    }
}

/// A feasible value-investor trade against a specific market maker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueCandidate {
    pub mm: usize,
    pub side: Side,
    pub price: f64,
    pub size: f64,
}

/// Evaluates both sides against every neighbor market maker and keeps the
/// feasible candidate furthest from the investor's target.
pub fn value_investor_choice<R: Rng + ?Sized>(
    agent: usize,
    vi: &ValueInvestorState,
    net: &NetworkTopology,
    mms: &[MarketMakerState],
    cap: f64,
    rng: &mut R,
) -> Result<Option<ValueCandidate>> {
    let mut best: Vec<ValueCandidate> = Vec::new();
    let mut best_gap = 0.0;
    for &mm in net.mm_neighbors(agent)? {
        for side in [Side::MakerSells, Side::MakerBuys] {
            let q = solve_value_trade(vi, &mms[mm], side, cap);
            // Investor buys below target (maker sells, size < 0) or sells
            // above target (maker buys, size > 0).
            let feasible = match side {
                Side::MakerSells => q.price < vi.target && q.size < 0.0,
                Side::MakerBuys => q.price > vi.target && q.size > 0.0,
            };
            if !feasible {
                continue;
            }
            let gap = (q.price - vi.target).abs();
            let candidate = ValueCandidate {
                mm,
                side,
                price: q.price,
                size: q.size,
            };
            if best.is_empty() || gap > best_gap {
                best_gap = gap;
                best.clear();
                best.push(candidate);
            } else if gap == best_gap {
                best.push(candidate);
            }
        }
    }
    Ok(match best.len() {
        0 => None,
        1 => Some(best[0]),
        n => Some(best[rng.random_range(0..n)]),
    })
}

/// Value-investor turn: the trade it would execute this tick, if any.
pub fn value_investor_act<R: Rng + ?Sized>(
    tick: u64,
    agent: usize,
    vi: &ValueInvestorState,
    net: &NetworkTopology,
    mms: &[MarketMakerState],
    cap: f64,
    rng: &mut R,
) -> Result<Option<Trade>> {
    let investor = net.agent(agent)?;
    Ok(value_investor_choice(agent, vi, net, mms, cap, rng)?.map(|c| {
        Trade::new(
            tick,
            investor,
            net.agent(c.mm).expect("neighbor exists"),
            c.price,
            c.size,
        )
    }))
}

/// A market maker beyond its position limit asks its dealer neighbors to take
/// the inventory off its hands, up to `cap` units per trade.
pub fn interdealer_act<R: Rng + ?Sized>(
    tick: u64,
    dealer: usize,
    net: &NetworkTopology,
    mms: &[MarketMakerState],
    cap: f64,
    rng: &mut R,
) -> Result<Option<Trade>> {
    let inventory = mms[dealer].inventory;
    if inventory == 0.0 {
        return Ok(None);
    }
    // Counterparty size is the opposite of the initiator's desired trade.
    let counter_size = inventory.clamp(-cap, cap);
    let side = Side::of_size(counter_size);
    let Some(quote) = best_quote_among(net.mm_neighbors(dealer)?, mms, side, counter_size, rng) else {
        return Ok(None);
    };
    Ok(Some(Trade::new(
        tick,
        net.agent(dealer)?,
        net.agent(quote.mm)?,
        quote.price,
        counter_size,
    )))
}

/// Moves the last seen price of the counterparty and of every market maker
/// linked to it.
pub fn observe_trade(trade: &Trade, net: &NetworkTopology, mms: &mut [MarketMakerState]) {
    let mm = trade.mm.index;
    mms[mm].last_seen_price = trade.price;
    if let Ok(neighbors) = net.mm_neighbors(mm) {
        for &other in neighbors {
            mms[other].last_seen_price = trade.price;
        }
    }
}

/// Settles a trade: the counterparty's inventory moves by `size`, the
/// investor's by `-size`, and linked dealers observe the print.
///
/// `investor_inventory` is ignored for inter-dealer trades, where the
/// initiator is itself in `mms`.
pub fn execute_trade(
    trade: &Trade,
    net: &NetworkTopology,
    mms: &mut [MarketMakerState],
    investor_inventory: Option<&mut f64>,
) {
    mms[trade.mm.index].inventory += trade.size;
    let investor = trade.investor();
    if investor.role == Role::MarketMaker {
        mms[investor.index].inventory -= trade.size;
    } else {
        let inv = investor_inventory.expect("investor inventory required");
        *inv -= trade.size;
    }
    observe_trade(trade, net, mms);
}
