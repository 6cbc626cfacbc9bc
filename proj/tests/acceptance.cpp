#include "acceptance.hpp"

#include <cstdio>

int main() {
    int failed = 0;
    for (int id = 1; id <= bifree::acceptance::criterion_count; ++id) {
        auto r = bifree::acceptance::run(id);
        std::printf("%s\n", r.line().c_str());
        std::fflush(stdout);
        failed += !r.pass();
    }
    std::printf("%d of %d criteria passed\n", bifree::acceptance::criterion_count - failed,
                bifree::acceptance::criterion_count);
    return failed ? 1 : 0;
}
