#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tdmr::verify {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<std::string> suite_names();

// Runs one invariant suite: "grad", "hungarian", "ap", "similarity",
// "synthesis", "tokenizer".
SuiteResult run_suite(const std::string& name, std::uint64_t seed);

std::vector<SuiteResult> run_all(std::uint64_t seed);

// Finite-difference check of the total training loss through the whole
// pipeline at a tiny configuration; returns the max relative error.
double end_to_end_grad_check(std::uint64_t seed, double h);

}  // namespace tdmr::verify
