// Kitchen layout geometry, parsed from the grid text the service ships at
// GET /layouts. Format: a "name width height episode_length cook_time"
// header, then height rows of glyphs, then recipe lines. Spawn glyphs 1/2
// mark floor cells.

export type TileKind =
  | 'floor'
  | 'counter'
  | 'pot'
  | 'onion_source'
  | 'tomato_source'
  | 'dish_source'
  | 'serve_window';

const GLYPH_TILES: Record<string, TileKind> = {
  '.': 'floor',
  '#': 'counter',
  P: 'pot',
  O: 'onion_source',
  T: 'tomato_source',
  D: 'dish_source',
  S: 'serve_window',
};

export interface LayoutInfo {
  name: string;
  width: number;
  height: number;
  episodeLength: number;
  cookTime: number;
  tiles: TileKind[][]; // [y][x]
  spawns: [number, number][];
}

export interface LayoutListing {
  name: string;
  text: string;
  episode_length: number;
  cook_time: number;
}

export function parseLayoutText(text: string): LayoutInfo {
  const lines = text.replace(/\n+$/, '').split('\n');
  const header = lines[0].trim().split(/\s+/);
  if (header.length !== 5) {
    throw new Error(`layout header needs 5 fields, got ${header.length}`);
  }
  const [name, w, h, ep, cook] = header;
  const width = Number(w);
  const height = Number(h);
  if (!Number.isInteger(width) || !Number.isInteger(height)) {
    throw new Error('layout header sizes must be integers');
  }
  if (lines.length < 1 + height) {
    throw new Error(`expected ${height} grid rows, got ${lines.length - 1}`);
  }

  const tiles: TileKind[][] = [];
  const spawnAt: Record<string, [number, number]> = {};
  for (let y = 0; y < height; y++) {
    const rowText = lines[1 + y];
    if (rowText.length !== width) {
      throw new Error(`row ${y} has width ${rowText.length}, expected ${width}`);
    }
    const row: TileKind[] = [];
    for (let x = 0; x < width; x++) {
      const glyph = rowText[x];
      if (glyph === '1' || glyph === '2') {
        spawnAt[glyph] = [x, y];
        row.push('floor');
      } else if (glyph in GLYPH_TILES) {
        row.push(GLYPH_TILES[glyph]);
      } else {
        throw new Error(`unknown glyph '${glyph}' at (${x},${y})`);
      }
    }
    tiles.push(row);
  }
  if (!spawnAt['1'] || !spawnAt['2']) {
    throw new Error('layout must mark both spawns');
  }

  return {
    name,
    width,
    height,
    episodeLength: Number(ep),
    cookTime: Number(cook),
    tiles,
    spawns: [spawnAt['1'], spawnAt['2']],
  };
}
