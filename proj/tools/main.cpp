#include <cstdio>

int main() {
  std::puts("kvlab: CLI under construction");
  return 0;
}
