#pragma once

#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace swt::selftest {

// quick: every criterion that needs no long training run (1-6, 8, 9).
// full: all eleven.
enum class Scope { quick, full };

struct Outcome {
    int id = 0;
    std::string title;
    bool pass = false;
    bool binding = true;
    std::string detail;
    double seconds = 0.0;
};

struct Options {
    Scope scope = Scope::quick;
    std::filesystem::path work_dir;  // scratch space; a temp dir when empty
    std::set<int> only;              // run just these ids when nonempty
};

// "[PASS] 3 title: detail (1.2 s)"
std::string format(const Outcome& o);

// Runs the selected criteria in order, printing each line as it finishes.
std::vector<Outcome> run(const Options& options, std::ostream& out);

// True when every binding criterion passed.
bool run_all(Scope scope, std::ostream& out);

}  // namespace swt::selftest
