#include <cstdio>

int main() {
  std::printf("gvs: CLI under construction\n");
  return 0;
}
