fn main() {
    std::process::exit(opencity::evalcli::run(std::env::args_os()));
}
