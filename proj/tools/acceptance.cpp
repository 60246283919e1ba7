#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "swt/selftest.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria: one PASS/FAIL line each"};
    std::set<int> only, known;
    std::string work;
    app.add_option("--only", only, "Run just these criterion ids");
    app.add_option("--known-failing", known,
                   "Ids whose failure is reported but does not change the exit status");
    app.add_option("--work-dir", work, "Scratch directory");
    CLI11_PARSE(app, argc, argv);

    auto results = swt::selftest::run({swt::selftest::Scope::full, work, only}, std::cout);
    int failed = 0, excused = 0;
    for (const auto& r : results) {
        if (r.pass || !r.binding) continue;
        if (known.count(r.id)) {
            ++excused;
        } else {
            ++failed;
        }
    }
    std::size_t passed = 0;
    for (const auto& r : results) passed += r.pass;
    std::cout << passed << "/" << results.size() << " criteria passed";
    if (excused) std::cout << ", " << excused << " known failure(s)";
    std::cout << "\n";
    return failed == 0 ? 0 : 1;
}
