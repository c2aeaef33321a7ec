#include <cstdio>

int main() {
    std::puts("mpct: placeholder");
    return 0;
}
