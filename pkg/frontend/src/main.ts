// Browser entry point: picker for layout/agent, socket wiring, keyboard
// capture and the render loop. All game truth comes from state broadcasts.

import type { AgentInfo, ServerMessage, SessionConfig } from './protocol.js';
import { LayoutListing, parseLayoutText } from './layout.js';
import { ClientState } from './client.js';
import { ActionGate, InputHandler } from './input.js';
import { SessionSocket } from './net.js';
import { createRenderer } from './render.js';

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const addressInput = el<HTMLInputElement>('address');
const layoutSelect = el<HTMLSelectElement>('layout');
const agentSelect = el<HTMLSelectElement>('agent');
const seatSelect = el<HTMLSelectElement>('seat');
const startButton = el<HTMLButtonElement>('start');
const leaveButton = el<HTMLButtonElement>('leave');
const statusLine = el<HTMLElement>('status');
const canvas = el<HTMLCanvasElement>('game');

const client = new ClientState();
const renderer = createRenderer(canvas);
let session: SessionSocket | null = null;
let agents: AgentInfo[] = [];
let layouts: LayoutListing[] = [];

const setStatus = (text: string) => {
  statusLine.textContent = text;
};

const wsUrl = (base: string) => `${base.replace(/^http/, 'ws').replace(/\/$/, '')}/session`;

async function loadCatalog(): Promise<void> {
  const base = addressInput.value.replace(/\/$/, '');
  const health = await fetch(`${base}/health`).then((r) => r.json());
  const listing = await fetch(`${base}/layouts`).then((r) => r.json());
  agents = health.agents;
  layouts = listing.layouts;
  layoutSelect.innerHTML = '';
  for (const row of layouts) {
    const option = document.createElement('option');
    option.value = row.name;
    option.textContent = row.name;
    layoutSelect.appendChild(option);
  }
  refreshAgents();
  setStatus(`service ok, ${agents.length} agents`);
}

function refreshAgents(): void {
  agentSelect.innerHTML = '';
  for (const agent of agents.filter((a) => a.layout === layoutSelect.value)) {
    const option = document.createElement('option');
    option.value = agent.id;
    option.textContent = `${agent.id} (${agent.version})`;
    agentSelect.appendChild(option);
  }
}

function start(): void {
  const listing = layouts.find((row) => row.name === layoutSelect.value);
  if (!listing || !agentSelect.value) {
    setStatus('pick a layout and agent first');
    return;
  }
  stop();
  client.reset();
  client.layout = parseLayoutText(listing.text);
  client.config = {
    layout: listing.name,
    agent: agentSelect.value,
    duration_s: 60,
    tick_rate: 6,
    human_seat: Number(seatSelect.value) === 1 ? 1 : 0,
    record: true,
  } satisfies SessionConfig;
  renderer.resize(client.layout);

  const gate = new ActionGate((action, tick) => session?.action(action, tick));
  const input = new InputHandler(gate, document);
  client.status = 'connecting';
  setStatus('connecting...');

  const socket = new WebSocket(wsUrl(addressInput.value));
  session = new SessionSocket(socket, {
    onOpen: () => {
      client.status = 'open';
      setStatus('live: arrows move, space interacts');
      session?.join(client.config!);
    },
    onClose: () => {
      client.status = 'closed';
      input.dispose();
      gate.clear();
      if (!client.result) {
        // dropped mid-game: freeze nothing, prompt a rejoin
        client.reset();
        setStatus('disconnected, press start to rejoin');
      }
      session = null;
    },
    onMessage: (msg: ServerMessage) => {
      client.apply(msg);
      if (msg.type === 'state') gate.tick(msg.tick);
      if (msg.type === 'result') setStatus(`finished, final score ${msg.final_score}`);
      if (msg.type === 'error') setStatus(`error ${msg.code}: ${msg.detail}`);
    },
  });
}

function stop(): void {
  if (session) {
    session.leave();
    session.close();
    session = null;
  }
}

function frame(): void {
  if (client.layout) {
    renderer.draw({
      layout: client.layout,
      state: client.last ? client.last.state : null,
      score: client.score,
      timeLeft: client.timeLeft,
      result: client.result,
      error: client.error,
    });
  }
  requestAnimationFrame(frame);
}

startButton.addEventListener('click', start);
leaveButton.addEventListener('click', stop);
layoutSelect.addEventListener('change', refreshAgents);
addressInput.addEventListener('change', () => {
  loadCatalog().catch((err) => setStatus(`service unreachable: ${err}`));
});

loadCatalog().catch((err) => setStatus(`service unreachable: ${err}`));
requestAnimationFrame(frame);
