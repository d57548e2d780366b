#include "cdcflow/cli/app.hpp"

int main(int argc, char** argv) { return cdcflow::cli::run(argc, argv); }
