// SPDX-License-Identifier: Apache-2.0
#include "refine/cli.hpp"

int main(int argc, char** argv) { return refine::cli::main_entry(argc, argv); }
