import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // DOM-facing suites opt into jsdom with a @vitest-environment pragma
    environment: 'node',
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
