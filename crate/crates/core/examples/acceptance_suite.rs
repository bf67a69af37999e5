//! Runs acceptance criteria 1-10 and prints one line per criterion.

fn main() {
    let ids: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let outcomes = if ids.is_empty() {
        rectiflow::verify::run_all()
    } else {
        ids.into_iter().filter_map(rectiflow::verify::run_one).collect()
    };
    for o in &outcomes {
        println!("{}", o.line());
    }
}
