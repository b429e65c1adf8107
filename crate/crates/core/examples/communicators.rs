//! The three link profiles side by side: reliable static, reliable
//! time-varying and lossy best-effort.

use std::time::Duration;

use teamsim::communicator::{Bus, CommPolicy, Communicator, Payload};
use teamsim::netgraph::{CommGraph, EdgeSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = CommGraph::complete(2);

    let bus = Bus::new();
    let mut a = Communicator::new(0, CommPolicy::static_graph(g.clone()), &bus)?;
    let mut b = Communicator::new(1, CommPolicy::static_graph(g.clone()), &bus)?;
    for k in 0..3 {
        a.send(&Payload::Int(k), &[1], k as u64)?;
    }
    let fifo: Vec<_> = (0..3).filter_map(|_| b.asynchronous_receive(0).ok().flatten()).collect();
    println!("static, FIFO order: {fifo:?}");
    a.send(&Payload::Text("round 7".into()), &[1], 7)?;
    println!("static, tagged receive: {:?}", b.receive(0, 7, Duration::from_millis(100))?);

    let bus = Bus::new();
    let sched = EdgeSchedule::random(g.clone(), 0.5, 3)?;
    let mut a = Communicator::new(0, CommPolicy::time_varying(sched.clone()), &bus)?;
    let mut b = Communicator::new(1, CommPolicy::time_varying(sched), &bus)?;
    let mut got = 0;
    for round in 0..20 {
        a.exchange_send(&Payload::Int(round as i64), &[1], round)?;
        got += b.exchange_collect(&[0], round)?.len();
    }
    println!("time-varying, 20 rounds at activation 0.5: {got} delivered");

    let bus = Bus::new();
    let lossy = CommPolicy::best_effort(EdgeSchedule::Fixed(g), 1.0, 3);
    let mut a = Communicator::new(0, lossy.clone(), &bus)?;
    let mut b = Communicator::new(1, lossy, &bus)?;
    a.send(&Payload::Int(1), &[1], 0)?;
    println!("best-effort, 100% drop: {:?}", b.asynchronous_receive(0)?);
    println!("best-effort, blocking receive: {}", b.receive(0, 0, Duration::from_millis(10)).unwrap_err());
    Ok(())
}
