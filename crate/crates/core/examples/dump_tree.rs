//! Print the syntax tree of a file: `cargo run --example dump_tree -- python file.py`
use std::io::Read;

fn main() {
    let mut args = std::env::args().skip(1);
    let lang: synth_eval::code::Lang = args.next().expect("lang").parse().expect("lang");
    let text = match args.next() {
        Some(p) => std::fs::read_to_string(p).expect("read"),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).expect("stdin");
            s
        }
    };
    let tree = synth_eval::code::parse_text(lang, &text).expect("parse");
    print!("{}", tree.dump(&text));
}
