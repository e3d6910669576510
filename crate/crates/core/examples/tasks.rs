//! Parsing task specifications.

use flowmi::bench::TaskSpec;

fn main() {
    for text in ["CT->CTC", "DCE3, DCE1 -> DCE2", "DCE1->DCE2,DCE3", "CT->CT", "CT,DCE1->CTC", "CT->XYZ"] {
        match TaskSpec::parse(text) {
            Ok(t) => println!("{text:<22} ok   {t} ({} in, {} out, {})", t.inputs().len(), t.outputs().len(), t.family()),
            Err(e) => println!("{text:<22} err  {e}"),
        }
    }
    let defaults: Vec<String> = TaskSpec::defaults().iter().map(ToString::to_string).collect();
    println!("defaults: {}", defaults.join("; "));
}
