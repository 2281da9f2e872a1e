#include "bilm/cli/app.hpp"

int main(int argc, char** argv) { return bilm::cli::run(argc, argv); }
