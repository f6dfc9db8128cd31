fn main() { reacta::cli::main() }
