//! Bundled example programs, registered by name so the driver and workers
//! resolve the same code in cluster mode.
//!
//! Each program is deterministic, so repeated runs (and runs under
//! different transports or routing modes) return identical result arrays.

use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use crate::codec::{Kind, Value};
use crate::comm::{CommError, Communicator};
use crate::runtime::FunctionRegistry;

pub const MATVEC: &str = "matvec";
pub const RING: &str = "ring";
pub const EVEN_ODD: &str = "evenodd";
pub const MATVEC_2D: &str = "matvec2d";

/// All bundled example names, in presentation order.
pub const ALL: [&str; 4] = [MATVEC, RING, EVEN_ODD, MATVEC_2D];

/// A registry holding every bundled example.
pub fn registry() -> FunctionRegistry {
    let mut r = FunctionRegistry::new();
    r.register(MATVEC, matvec);
    r.register(RING, ring);
    r.register(EVEN_ODD, even_odd);
    r.register(MATVEC_2D, matvec_2d);
    r
}

/// Check `n` against an example's shape requirements before launching.
pub fn validate_process_count(name: &str, n: u32) -> Result<(), String> {
    match name {
        MATVEC_2D if n != 9 => Err(format!("{MATVEC_2D} requires exactly 9 ranks, got {n}")),
        EVEN_ODD if n < 2 || n % 2 != 0 => Err(format!(
            "{EVEN_ODD} requires an even number of ranks (>= 2), got {n}"
        )),
        _ if n == 0 => Err("at least 1 rank is required".to_string()),
        _ => Ok(()),
    }
}

/// One-line human summary of an example's result array.
pub fn summarize(name: &str, results: &[Value]) -> String {
    match name {
        MATVEC => {
            let sum: i64 = results
                .iter()
                .filter_map(|v| v.as_i32())
                .map(i64::from)
                .sum();
            format!("sum {sum}")
        }
        RING => match results.first().and_then(Value::as_i32) {
            Some(token) => format!("root token {token}"),
            None => "no result".to_string(),
        },
        EVEN_ODD => {
            let half = results.len() / 2;
            let parities: Vec<String> = results[..half]
                .iter()
                .map(|v| v.as_bool().map_or("?".to_string(), |b| b.to_string()))
                .collect();
            format!("parities [{}]", parities.join(", "))
        }
        MATVEC_2D => {
            let rows: Vec<String> = results
                .iter()
                .step_by(3)
                .map(|v| v.as_i32().map_or("?".to_string(), |x| x.to_string()))
                .collect();
            format!("rows [{}]", rows.join(", "))
        }
        _ => format!("{} results", results.len()),
    }
}

fn expect_i32(value: Value) -> Result<i32, CommError> {
    i32::try_from(value).map_err(CommError::from)
}

/// Row-parallel matrix-vector product over a fixed 3x3 system. Ranks beyond
/// the matrix rows contribute 0; the driver sums the partial results.
fn matvec(world: &Communicator, _params: Option<&Value>) -> Result<Value, CommError> {
    const MAT: [[i32; 3]; 3] = [[1, 2, 3], [4, 5, 6], [7, 8, 9]];
    const VEC: [i32; 3] = [1, 2, 3];

    let rank = world.rank() as usize;
    let out = if rank < MAT.len() {
        MAT[rank].iter().zip(VEC).map(|(a, b)| a * b).sum()
    } else {
        0
    };
    Ok(Value::I32(out))
}

/// Token ring: rank 0 starts a token at 0; each hop increments it; rank 0
/// finally receives size - 1. Every rank returns its final token.
fn ring(world: &Communicator, _params: Option<&Value>) -> Result<Value, CommError> {
    let rank = world.rank();
    let size = world.size();
    let next = (rank + 1) % size;

    let token = if rank == 0 {
        world.send(next, 0, &Value::I32(0))?;
        expect_i32(world.receive(size - 1, 0, Kind::I32)?)?
    } else {
        let token = expect_i32(world.receive(rank - 1, 0, Kind::I32)?)? + 1;
        world.send(next, 0, &Value::I32(token))?;
        token
    };
    Ok(Value::I32(token))
}

/// Nonblocking receive demo: each rank in the lower half sends its rank to
/// a partner in the upper half and learns its parity back through a ticket,
/// both via a completion callback and an explicit await.
fn even_odd(world: &Communicator, _params: Option<&Value>) -> Result<Value, CommError> {
    let size = world.size();
    let rank = world.rank();
    if size % 2 != 0 {
        return Err(CommError::app("evenodd requires an even number of ranks"));
    }
    let half = size / 2;

    if rank < half {
        world.send(rank + half, 0, &Value::I32(rank as i32))?;
        let ticket = world.receive_async(rank + half, 0, Kind::Bool)?;

        let (tx, rx) = mpsc::channel();
        ticket.on_complete(move |outcome| {
            let _ = tx.send(outcome.and_then(|v| bool::try_from(v).map_err(CommError::from)));
        });
        log::info!("rank={rank} waiting for parity reply");

        let via_callback = rx
            .recv()
            .map_err(|_| CommError::app("parity callback never ran"))??;
        let via_await = bool::try_from(ticket.wait()?)?;
        if via_callback != via_await {
            return Err(CommError::app("callback and await disagree"));
        }
        log::info!("rank={rank} is even: {via_await}");
        Ok(Value::Bool(via_await))
    } else {
        let peer = expect_i32(world.receive(rank - half, 0, Kind::I32)?)?;
        // The deliberate delay keeps replies strictly after the lower
        // half has posted its asynchronous receives.
        thread::sleep(Duration::from_millis(300));
        let even = peer % 2 == 0;
        world.send(rank - half, 0, &Value::Bool(even))?;
        Ok(Value::Bool(even))
    }
}

/// 2D decomposition of the 3x3 matrix-vector product: split the world into
/// row and column communicators, place the vector on the diagonal, broadcast
/// it down each column, and all-reduce partial products along each row.
/// Requires exactly 9 ranks.
fn matvec_2d(world: &Communicator, _params: Option<&Value>) -> Result<Value, CommError> {
    if world.size() != 9 {
        return Err(CommError::app("matvec2d requires exactly 9 ranks"));
    }
    let world_rank = world.rank();

    let row = world
        .split(world_rank as i32 / 3, world_rank as i32)?
        .ok_or_else(|| CommError::app("row split returned no communicator"))?;
    let col = world
        .split(world_rank as i32 % 3, world_rank as i32)?
        .ok_or_else(|| CommError::app("column split returned no communicator"))?;

    // Matrix entry at (row i, column j) is 3i + j + 1, i.e. world rank + 1.
    let a = world_rank as i32 + 1;
    let row_rank = row.rank(); // column index j
    let col_rank = col.rank(); // row index i

    // The last cell of each row sends x[i] = i + 1 to the row's diagonal
    // cell, whose rank within the row equals the sender's column rank.
    if row_rank == row.size() - 1 {
        row.send(col_rank, 0, &Value::I32(1 + col_rank as i32))?;
    }
    let x_row = if row_rank == col_rank {
        Some(expect_i32(row.receive(row.size() - 1, 0, Kind::I32)?)?)
    } else {
        None
    };

    let multiplied = match x_row {
        Some(x) => {
            col.broadcast(col_rank, Some(&Value::I32(x)), Kind::I32)?;
            x * a
        }
        None => {
            let x = expect_i32(col.broadcast(row_rank, None, Kind::I32)?)?;
            a * x
        }
    };

    let result = row.all_reduce(&Value::I32(multiplied), |p, q| {
        Value::I32(p.as_i32().unwrap_or(0) + q.as_i32().unwrap_or(0))
    })?;
    Ok(result)
}
