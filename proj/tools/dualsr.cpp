#include <cstdio>

int main() {
  std::puts("dualsr: subcommands not wired yet");
  return 0;
}
