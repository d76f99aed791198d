fn main() {
    std::process::exit(fedsim::expcli::run(std::env::args_os()));
}
